//! Synthetic feature generator for tests and smoke runs.
//!
//! Clip `i` is assigned concept `i % concepts.len()`. Every frame of every
//! stream is Gaussian noise plus a constant shift on the coordinate block
//! owned by that concept, so captions are predictable from features.

use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{write_fvec, DatasetManifest, FeatError, FeatureKind, FeatureStream, ManifestEntry, Split};
use crate::numkit::{seeded_rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConcept {
    pub name: String,
    pub captions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthStream {
    pub kind: FeatureKind,
    pub dim: usize,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub clips: usize,
    pub concepts: Vec<SynthConcept>,
    pub streams: Vec<SynthStream>,
    #[serde(default = "default_shift")]
    pub shift: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Split assigned to every clip; unassigned when absent.
    #[serde(default)]
    pub split: Option<Split>,
    /// Every n-th clip (1-based) gets a silent (T=0) audio stream.
    #[serde(default)]
    pub silent_every: Option<usize>,
}

fn default_shift() -> f64 {
    3.0
}

fn default_noise() -> f64 {
    0.1
}

impl SynthSpec {
    /// Eight clips, two concepts, one small object stream.
    pub fn two_concepts() -> Self {
        Self {
            clips: 8,
            concepts: vec![
                SynthConcept { name: "cooking".into(), captions: vec!["a man is cooking food".into()] },
                SynthConcept { name: "running".into(), captions: vec!["a dog is running outside".into()] },
            ],
            streams: vec![SynthStream { kind: FeatureKind::Object2d, dim: 16, frames: 40 }],
            shift: default_shift(),
            noise: default_noise(),
            split: Some(Split::Train),
            silent_every: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| FeatError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| FeatError::Manifest { path: path.to_path_buf(), line: 0, msg: e.to_string() })
    }

    fn validate(&self) -> Result<(), FeatError> {
        if self.concepts.is_empty() || self.concepts.iter().any(|c| c.captions.is_empty()) {
            return Err(FeatError::Data("synth spec needs concepts with at least one caption".into()));
        }
        for s in &self.streams {
            if s.dim < self.concepts.len() {
                return Err(FeatError::Data(format!(
                    "{} dim {} is smaller than the number of concepts",
                    s.kind, s.dim
                )));
            }
            if s.kind == FeatureKind::Audio && s.frames > 1 {
                return Err(FeatError::Data("synthetic audio must have 0 or 1 frames".into()));
            }
        }
        if !(self.noise >= 0.0) {
            return Err(FeatError::Data("noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn concept_of(&self, clip: usize) -> usize {
        clip % self.concepts.len()
    }
}

/// 64-bit FNV-1a, used to derive per-file seeds.
fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Generates one stream; depends only on `(seed, video_id, kind)` and the spec.
pub(crate) fn synth_stream(
    spec: &SynthSpec,
    stream: &SynthStream,
    video_id: &str,
    concept: usize,
    frames: usize,
    seed: u64,
) -> Result<FeatureStream, FeatError> {
    let mut rng = seeded_rng(fnv1a(&[&seed.to_le_bytes(), video_id.as_bytes(), stream.kind.name().as_bytes()]));
    let normal = Normal::new(0.0, spec.noise).map_err(|e| FeatError::Data(e.to_string()))?;
    let block = stream.dim / spec.concepts.len();
    let (lo, hi) = (concept * block, (concept + 1) * block);
    let mut values = Tensor::zeros(frames, stream.dim);
    for r in 0..frames {
        for (c, v) in values.row_mut(r).iter_mut().enumerate() {
            let shift = if (lo..hi).contains(&c) { spec.shift } else { 0.0 };
            *v = (shift + normal.sample(&mut rng)) as f32;
        }
    }
    FeatureStream::new(stream.kind, values)
}

/// Writes FVEC files under `out/features/` plus `out/manifest.jsonl`.
pub fn synth_features(spec: &SynthSpec, out: impl AsRef<Path>, seed: u64) -> Result<DatasetManifest, FeatError> {
    spec.validate()?;
    let out = out.as_ref();
    let feat_dir = out.join("features");
    fs::create_dir_all(&feat_dir).map_err(|source| FeatError::Io { path: feat_dir.clone(), source })?;

    let mut entries = Vec::with_capacity(spec.clips);
    for i in 0..spec.clips {
        let video_id = format!("synth{i:04}");
        let concept = spec.concept_of(i);
        let mut features = std::collections::BTreeMap::new();
        for s in &spec.streams {
            let silent = s.kind == FeatureKind::Audio && spec.silent_every.is_some_and(|n| n > 0 && (i + 1) % n == 0);
            let frames = if silent { 0 } else { s.frames };
            let stream = synth_stream(spec, s, &video_id, concept, frames, seed)?;
            let rel = format!("features/{video_id}.{}.fvec", s.kind);
            write_fvec(&stream, out.join(&rel))?;
            features.insert(s.kind, rel);
        }
        entries.push(ManifestEntry {
            video_id,
            split: spec.split,
            captions: spec.concepts[concept].captions.clone(),
            features,
            category: Some(spec.concepts[concept].name.clone()),
        });
    }
    let mut manifest = DatasetManifest::new(entries, PathBuf::from(out));
    for s in &spec.streams {
        if manifest.profile().dim(s.kind) != Some(s.dim) {
            manifest.profile_overrides.insert(s.kind, s.dim);
        }
    }
    manifest.save(out.join("manifest.jsonl"))?;
    Ok(manifest)
}
