//! Caption generation: greedy decoding and beam search.
//!
//! Decoding starts from `BOS` and never proposes `PAD` or `BOS`. A hypothesis
//! finishes when it emits `EOS` or reaches the word cap; a capped hypothesis
//! is not charged for an implicit `EOS`.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featio::{DatasetManifest, FeatError, FeatureKind, FusedClip, Split};
use crate::model::{DecoderState, EncodedStates, Forward, Mode, ModelError, S2vtModel, StepDistribution};
use crate::numkit::{Scalar, Tensor};
use crate::textkit::{TextError, Vocabulary, BOS, EOS, MAX_WORDS, PAD, UNK};

#[derive(Debug, Error)]
pub enum InferError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub const DEFAULT_BEAM_WIDTH: usize = 5;
pub const DEFAULT_ALPHA: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeOptions {
    /// Maximum number of content words before a hypothesis is cut off.
    pub max_words: usize,
    /// Removes `UNK` from the candidate set.
    pub suppress_unk: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { max_words: MAX_WORDS, suppress_unk: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decoder {
    Greedy,
    Beam { width: usize, alpha: f64 },
}

impl Decoder {
    pub fn name(&self) -> &'static str {
        match self {
            Decoder::Greedy => "greedy",
            Decoder::Beam { .. } => "beam",
        }
    }
}

/// A partial or complete output sequence (without the leading `BOS`).
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Number of scored tokens: content words plus a generated `EOS`.
    pub fn scored_len(&self) -> usize {
        self.tokens.len()
    }

    /// Content words, without a trailing `EOS`.
    pub fn words(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    /// Length-normalized score `log_prob / len^alpha`.
    pub fn score(&self, alpha: f64) -> f64 {
        self.log_prob / (self.scored_len().max(1) as f64).powf(alpha)
    }
}

/// Highest score first; equal scores fall back to the smaller token sequence.
fn rank(a: &(f64, &[usize]), b: &(f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

fn allowed(id: usize, opts: &DecodeOptions) -> bool {
    id != PAD && id != BOS && !(opts.suppress_unk && id == UNK)
}

fn check_options(vocab_size: usize, opts: &DecodeOptions) -> Result<(), InferError> {
    if opts.max_words == 0 {
        return Err(InferError::Contract("max_words must be at least 1".into()));
    }
    if vocab_size <= EOS {
        return Err(InferError::Contract("vocabulary has no EOS".into()));
    }
    Ok(())
}

struct Session<'p, T: Scalar> {
    fwd: Forward<'p, T>,
    enc: EncodedStates,
}

impl<'p, T: Scalar> Session<'p, T> {
    fn start(model: &'p S2vtModel<T>, clip: &Tensor<T>, valid_steps: usize) -> Result<Self, InferError> {
        let mut fwd = model.forward()?;
        let enc = fwd.encode(clip, valid_steps, &mut Mode::Eval)?;
        Ok(Self { fwd, enc })
    }

    fn step(&mut self, prev: usize, state: &DecoderState) -> Result<(Vec<f64>, DecoderState), InferError> {
        let (logits, next) = self.fwd.decode_step(prev, state, &self.enc, &mut Mode::Eval)?;
        let dist = StepDistribution::from_logits(self.fwd.graph.value(logits));
        Ok((dist.log_probs(), next))
    }
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy_decode<T: Scalar>(
    model: &S2vtModel<T>,
    clip: &Tensor<T>,
    valid_steps: usize,
    opts: &DecodeOptions,
) -> Result<Hypothesis, InferError> {
    check_options(model.config.vocab_size, opts)?;
    let mut session = Session::start(model, clip, valid_steps)?;
    let mut state = session.enc.carry;
    let mut hyp = Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false };
    let mut prev = BOS;
    while !hyp.finished {
        let (logp, next) = session.step(prev, &state)?;
        let mut best: Option<usize> = None;
        for (id, &lp) in logp.iter().enumerate() {
            if allowed(id, opts) && best.is_none_or(|b| lp > logp[b]) {
                best = Some(id);
            }
        }
        let id = best.ok_or_else(|| InferError::Contract("no decodable token".into()))?;
        hyp.tokens.push(id);
        hyp.log_prob += logp[id];
        hyp.finished = id == EOS || hyp.tokens.len() == opts.max_words;
        prev = id;
        state = next;
    }
    Ok(hyp)
}

/// Beam search. Each round pools live expansions with already finished
/// hypotheses and keeps the `width` best by cumulative log-probability;
/// the search ends once every kept hypothesis is finished. The result is
/// ranked by `log_prob / len^alpha`.
pub fn beam_decode<T: Scalar>(
    model: &S2vtModel<T>,
    clip: &Tensor<T>,
    valid_steps: usize,
    width: usize,
    alpha: f64,
    opts: &DecodeOptions,
) -> Result<Vec<Hypothesis>, InferError> {
    if width == 0 {
        return Err(InferError::Contract("beam width must be at least 1".into()));
    }
    check_options(model.config.vocab_size, opts)?;
    let mut session = Session::start(model, clip, valid_steps)?;
    let mut beams: Vec<(Hypothesis, DecoderState)> =
        vec![(Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false }, session.enc.carry)];

    while beams.iter().any(|(h, _)| !h.finished) {
        let mut pool: Vec<(Hypothesis, DecoderState)> = Vec::new();
        for (hyp, state) in beams {
            if hyp.finished {
                pool.push((hyp, state));
                continue;
            }
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let (logp, next) = session.step(prev, &state)?;
            for (id, &lp) in logp.iter().enumerate() {
                if !allowed(id, opts) {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(id);
                let finished = id == EOS || tokens.len() == opts.max_words;
                pool.push((Hypothesis { tokens, log_prob: hyp.log_prob + lp, finished }, next));
            }
        }
        pool.sort_by(|a, b| rank(&(a.0.log_prob, &a.0.tokens), &(b.0.log_prob, &b.0.tokens)));
        pool.truncate(width);
        beams = pool;
    }
    let mut out: Vec<Hypothesis> = beams.into_iter().map(|(h, _)| h).collect();
    out.sort_by(|a, b| rank(&(a.score(alpha), &a.tokens), &(b.score(alpha), &b.tokens)));
    Ok(out)
}

/// One line of caption output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub video_id: String,
    pub caption: String,
    /// Greedy: cumulative log-probability. Beam: length-normalized score.
    pub score: f64,
    pub decoder: String,
}

/// A model paired with the vocabulary it was trained on.
pub struct Captioner<'a> {
    model: &'a S2vtModel<f32>,
    vocab: &'a Vocabulary,
    pub options: DecodeOptions,
}

impl<'a> Captioner<'a> {
    pub fn new(model: &'a S2vtModel<f32>, vocab: &'a Vocabulary) -> Result<Self, InferError> {
        if model.config.vocab_size != vocab.len() {
            return Err(InferError::Contract(format!(
                "model vocabulary size {} does not match vocabulary of {} tokens",
                model.config.vocab_size,
                vocab.len()
            )));
        }
        Ok(Self { model, vocab, options: DecodeOptions::default() })
    }

    pub fn caption(&self, video_id: &str, clip: &FusedClip, decoder: Decoder) -> Result<CaptionRecord, InferError> {
        if clip.dim() != self.model.config.fused_dim {
            return Err(InferError::Contract(format!(
                "clip '{video_id}' has dim {}, model expects {}",
                clip.dim(),
                self.model.config.fused_dim
            )));
        }
        let (hyp, score) = match decoder {
            Decoder::Greedy => {
                let h = greedy_decode(self.model, &clip.values, clip.valid_steps, &self.options)?;
                let s = h.log_prob;
                (h, s)
            }
            Decoder::Beam { width, alpha } => {
                let h = beam_decode(self.model, &clip.values, clip.valid_steps, width, alpha, &self.options)?
                    .swap_remove(0);
                let s = h.score(alpha);
                (h, s)
            }
        };
        Ok(CaptionRecord {
            video_id: video_id.to_owned(),
            caption: self.vocab.decode(hyp.words())?,
            score,
            decoder: decoder.name().to_owned(),
        })
    }

    /// Captions every entry of `split` (all entries when `None`), in manifest
    /// order. Clips are processed on `workers` threads; output is identical
    /// for any worker count.
    pub fn caption_manifest(
        &self,
        manifest: &DatasetManifest,
        split: Option<Split>,
        selection: &[FeatureKind],
        decoder: Decoder,
        workers: usize,
    ) -> Result<Vec<CaptionRecord>, InferError> {
        let entries: Vec<_> = manifest.entries.iter().filter(|e| split.is_none() || e.split == split).collect();
        let run = |e: &&crate::featio::ManifestEntry| -> Result<CaptionRecord, InferError> {
            let clip = manifest.load_clip(e, selection)?;
            self.caption(&e.video_id, &clip, decoder)
        };
        if workers <= 1 {
            return entries.iter().map(run).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| InferError::Contract(format!("cannot start worker pool: {e}")))?;
        pool.install(|| entries.par_iter().map(run).collect())
    }
}

pub fn write_captions(records: &[CaptionRecord], path: impl AsRef<Path>) -> Result<(), InferError> {
    let path = path.as_ref();
    let io = |source| InferError::Io { path: path.to_path_buf(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r).expect("record serializes")).map_err(io)?;
    }
    Ok(())
}
