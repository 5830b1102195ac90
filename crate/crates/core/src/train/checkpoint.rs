//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "S2VTCKPT" | u32 version | u32 header length | JSON header
//! | f32 parameter blobs in PARAM_NAMES order
//! | optional Adam first-moment blobs, then second-moment blobs
//! ```
//!
//! The header carries everything needed to rebuild the model, its
//! vocabulary and the optimizer, so a checkpoint is self-contained.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, TrainError};
use crate::featio::FeatureKind;
use crate::model::{ModelConfig, ModelParams, S2vtModel, PARAM_NAMES};
use crate::numkit::Tensor;
use crate::textkit::Vocabulary;

pub const MAGIC: &[u8; 8] = b"S2VTCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub vocab_min_count: usize,
    pub vocab_tokens: Vec<String>,
    pub vocab_fingerprint: String,
    pub feature_selection: Vec<FeatureKind>,
    pub seed: u64,
    /// Train/test/val ratios used when the manifest carried no split.
    pub split_ratios: [f64; 3],
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub adam: AdamConfig,
    pub params: Vec<ParamEntry>,
    pub optimizer_state: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: S2vtModel<f32>,
    pub vocab: Vocabulary,
    pub feature_selection: Vec<FeatureKind>,
    pub seed: u64,
    pub split_ratios: [f64; 3],
    pub epoch: usize,
    pub optimizer: Option<AdamState<f32>>,
    pub adam: AdamConfig,
}

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

fn put_tensors(out: &mut Vec<u8>, tensors: &[&Tensor<f32>]) {
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn take_tensors(bytes: &[u8], pos: &mut usize, shapes: &[(usize, usize)]) -> Result<Vec<Tensor<f32>>, TrainError> {
    let mut out = Vec::with_capacity(shapes.len());
    for &(r, c) in shapes {
        let n = r * c * 4;
        let chunk = bytes
            .get(*pos..*pos + n)
            .ok_or_else(|| bad(format!("truncated at byte {}: expected {n} more bytes", *pos)))?;
        let data = chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        out.push(Tensor::from_vec(r, c, data).expect("length computed from shape"));
        *pos += n;
    }
    Ok(out)
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        let shapes = self.model.config.param_shapes();
        CheckpointHeader {
            model: self.model.config.clone(),
            vocab_min_count: self.vocab.min_count(),
            vocab_tokens: self.vocab.content_tokens().to_vec(),
            vocab_fingerprint: self.vocab.fingerprint(),
            feature_selection: self.feature_selection.clone(),
            seed: self.seed,
            split_ratios: self.split_ratios,
            epoch: self.epoch,
            step: self.optimizer.as_ref().map_or(0, |o| o.t),
            adam: self.adam,
            params: PARAM_NAMES
                .iter()
                .zip(shapes)
                .map(|(n, (rows, cols))| ParamEntry { name: n.to_string(), rows, cols })
                .collect(),
            optimizer_state: self.optimizer.is_some(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + self.model.config.num_weights() * 12);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        put_tensors(&mut out, &self.model.params.tensors());
        if let Some(opt) = &self.optimizer {
            put_tensors(&mut out, &opt.m.iter().collect::<Vec<_>>());
            put_tensors(&mut out, &opt.v.iter().collect::<Vec<_>>());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let hbytes = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(hbytes).map_err(|e| bad(format!("invalid header: {e}")))?;

        let shapes = header.model.param_shapes();
        let declared: Vec<(usize, usize)> = header.params.iter().map(|p| (p.rows, p.cols)).collect();
        let names_ok = header.params.iter().map(|p| p.name.as_str()).eq(PARAM_NAMES.iter().copied());
        if !names_ok || declared != shapes {
            return Err(bad("parameter table does not match the model config"));
        }
        let vocab = Vocabulary::from_parts(header.vocab_tokens.clone(), header.vocab_min_count).map_err(bad)?;
        if vocab.fingerprint() != header.vocab_fingerprint {
            return Err(bad("vocabulary fingerprint mismatch"));
        }
        if vocab.len() != header.model.vocab_size {
            return Err(bad("vocabulary size does not match the model config"));
        }

        let mut pos = 16 + hlen;
        let params = ModelParams::from_vec(take_tensors(bytes, &mut pos, &shapes)?).expect("arity fixed");
        let optimizer = if header.optimizer_state {
            let m = take_tensors(bytes, &mut pos, &shapes)?;
            let v = take_tensors(bytes, &mut pos, &shapes)?;
            Some(AdamState { config: header.adam, t: header.step, m, v })
        } else {
            None
        };
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        let model = S2vtModel::new(header.model, params).map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            model,
            vocab,
            feature_selection: header.feature_selection,
            seed: header.seed,
            split_ratios: header.split_ratios,
            epoch: header.epoch,
            optimizer,
            adam: header.adam,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            TrainError::Checkpoint(msg) => TrainError::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
