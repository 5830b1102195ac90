//! Dataset splitting, batching, the Adam optimizer, the training loop and
//! checkpointing.
//!
//! Every random choice is derived from the configured seed: the epoch order
//! from `seed + epoch`, each example's dropout masks from
//! `(seed, epoch, batch, position)`. With a fixed worker count a run is
//! bit-for-bit reproducible, and resuming from a checkpoint continues
//! exactly where the uninterrupted run would be.

mod adam;
mod checkpoint;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featio::{DatasetManifest, FeatError, FeatureKind, FusedClip, Split};
use crate::infer::{Captioner, Decoder, InferError};
use crate::metrics::{self, EvalCorpus, EvalItem, MetricReport, MetricsError};
use crate::model::{AttendLayer, Mode, ModelConfig, ModelError, S2vtModel};
use crate::numkit::{derive_seed, seeded_rng, GradTable, Scalar};
use crate::textkit::{TextError, Vocabulary, PAD};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointHeader, ParamEntry, MAGIC as CHECKPOINT_MAGIC};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Feature(#[from] FeatError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite {what} at optimizer step {step}")]
    NonFinite { what: String, step: u64 },
    #[error("checkpoint {0}")]
    Checkpoint(String),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("epoch {epoch}, batch {batch}: {source}")]
    At { epoch: usize, batch: usize, source: Box<TrainError> },
}

impl TrainError {
    /// True when the run stopped on NaN/inf values.
    pub fn is_numeric(&self) -> bool {
        match self {
            TrainError::NonFinite { .. } => true,
            TrainError::At { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

/// Training hyper-parameters and file locations. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Train/test/val ratios, used only when the manifest has no splits.
    pub split_ratios: [f64; 3],
    pub feature_selection: Vec<FeatureKind>,
    pub min_count: usize,
    /// Validate and checkpoint every this many epochs (0: only at the end).
    pub eval_every: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub attend: AttendLayer,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
    pub workers: usize,
    pub adam: AdamConfig,
    pub manifest: Option<PathBuf>,
    /// Vocabulary file; built from the training captions when absent.
    pub vocab: Option<PathBuf>,
    pub out: PathBuf,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 128,
            dropout: 0.2,
            epochs: 20,
            seed: 0,
            split_ratios: [0.65, 0.30, 0.05],
            feature_selection: vec![FeatureKind::Object2d],
            min_count: 1,
            eval_every: 1,
            hidden: 512,
            embed_dim: 512,
            attend: AttendLayer::Top,
            clip_norm: None,
            workers: 1,
            adam: AdamConfig::default(),
            manifest: None,
            vocab: None,
            out: PathBuf::from("run"),
            resume: None,
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.hidden == 0 || self.embed_dim == 0 || self.workers == 0 {
            return fail("batch_size, hidden, embed_dim and workers must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        check_ratios(&self.split_ratios)?;
        if self.feature_selection.is_empty() {
            return fail("feature_selection must name at least one kind");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return fail("clip_norm must be positive");
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
            return fail("adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

fn check_ratios(r: &[f64; 3]) -> Result<(), TrainError> {
    if r.iter().any(|x| !(*x >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(TrainError::Config(format!("split ratios {r:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Assigns splits when every entry lacks one; fully assigned manifests are
/// returned unchanged. Train and test counts are floors, val takes the rest.
pub fn split_dataset(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<DatasetManifest, TrainError> {
    check_ratios(&ratios)?;
    let assigned = manifest.entries.iter().filter(|e| e.split.is_some()).count();
    if assigned == manifest.entries.len() {
        return Ok(manifest.clone());
    }
    if assigned > 0 {
        return Err(TrainError::Contract(format!(
            "{assigned} of {} entries carry a split; assign all or none",
            manifest.entries.len()
        )));
    }
    let n = manifest.entries.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    // the epsilon keeps exact products such as 0.29·100 from flooring down
    let count = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let n_train = count(ratios[0]).min(n);
    let n_test = count(ratios[1]).min(n - n_train);
    let mut out = manifest.clone();
    for (rank, &i) in order.iter().enumerate() {
        out.entries[i].split = Some(if rank < n_train {
            Split::Train
        } else if rank < n_train + n_test {
            Split::Test
        } else {
            Split::Val
        });
    }
    Ok(out)
}

/// One (clip, caption) training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub clip: usize,
    /// `BOS w.. EOS`.
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Indices into the example list.
    pub examples: Vec<usize>,
    /// Targets right-padded with `PAD` to the longest in the batch.
    pub targets: Vec<Vec<usize>>,
}

/// Shuffles the examples with `seed + epoch` and cuts consecutive batches.
pub fn make_batches(examples: &[Example], batch_size: usize, seed: u64, epoch: usize) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut seeded_rng(seed.wrapping_add(epoch as u64)));
    order
        .chunks(batch_size.max(1))
        .map(|idx| {
            let width = idx.iter().map(|&i| examples[i].target.len()).max().unwrap_or(0);
            let targets = idx
                .iter()
                .map(|&i| {
                    let mut t = examples[i].target.clone();
                    t.resize(width, PAD);
                    t
                })
                .collect();
            Batch { examples: idx.to_vec(), targets }
        })
        .collect()
}

/// Per-example dropout settings for one batch.
#[derive(Clone, Copy, Debug)]
pub struct DropoutPlan {
    pub rate: f64,
    pub seed: u64,
    pub epoch: usize,
    pub batch: usize,
}

impl DropoutPlan {
    pub fn off() -> Self {
        Self { rate: 0.0, seed: 0, epoch: 0, batch: 0 }
    }

    fn example_seed(&self, position: usize) -> u64 {
        derive_seed(self.seed, &[self.epoch as u64, self.batch as u64, position as u64])
    }
}

fn accumulate<T: Scalar>(
    model: &S2vtModel<T>,
    clips: &[(&crate::numkit::Tensor<T>, usize)],
    targets: &[Vec<usize>],
    positions: std::ops::Range<usize>,
    plan: DropoutPlan,
) -> Result<(f64, GradTable<T>), TrainError> {
    let mut grads = model.zero_grads();
    let mut loss = 0.0;
    for pos in positions {
        let (clip, valid) = clips[pos];
        let mut rng = seeded_rng(plan.example_seed(pos));
        let mut mode = if plan.rate > 0.0 { Mode::Train { dropout: plan.rate, rng: &mut rng } } else { Mode::Eval };
        let mut fwd = model.forward()?;
        let node = fwd.sequence_loss(clip, valid, &targets[pos], &mut mode)?;
        fwd.graph.backward(node, &mut grads).map_err(ModelError::from)?;
        loss += fwd.graph.value(node).item().as_f64();
    }
    Ok((loss, grads))
}

/// Mean of per-example losses and the matching mean gradient.
///
/// With `pool`, the batch is cut into one contiguous chunk per thread and
/// chunk results are merged in order, so the result depends only on the
/// thread count.
pub fn batch_loss_and_grads<T: Scalar>(
    model: &S2vtModel<T>,
    clips: &[(&crate::numkit::Tensor<T>, usize)],
    targets: &[Vec<usize>],
    plan: DropoutPlan,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(f64, GradTable<T>), TrainError> {
    let n = targets.len();
    if n == 0 || clips.len() != n {
        return Err(TrainError::Contract("batch must pair every target with a clip".into()));
    }
    let (loss, mut grads) = match pool {
        Some(pool) if pool.current_num_threads() > 1 && n > 1 => {
            let parts = pool.current_num_threads().min(n);
            let bounds: Vec<std::ops::Range<usize>> =
                (0..parts).map(|k| (k * n / parts)..((k + 1) * n / parts)).collect();
            let results: Vec<Result<(f64, GradTable<T>), TrainError>> = pool.install(|| {
                use rayon::prelude::*;
                bounds.into_par_iter().map(|r| accumulate(model, clips, targets, r, plan)).collect()
            });
            let mut it = results.into_iter();
            let (mut loss, mut grads) = it.next().expect("at least one chunk")?;
            for r in it {
                let (l, g) = r?;
                loss += l;
                grads.merge(&g).map_err(ModelError::from)?;
            }
            (loss, grads)
        }
        _ => accumulate(model, clips, targets, 0..n, plan)?,
    };
    grads.scale(T::cast_from(1.0 / n as f64));
    Ok((loss / n as f64, grads))
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// Zero-based index of the finished epoch.
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_metrics: Option<MetricReport>,
    pub wall_ms: u64,
}

struct ValClip {
    video_id: String,
    clip: FusedClip,
    references: Vec<String>,
}

/// Owns the model, optimizer and loaded training data.
pub struct Trainer {
    config: TrainConfig,
    vocab: Vocabulary,
    model: S2vtModel<f32>,
    adam: AdamState<f32>,
    epoch: usize,
    clips: Vec<FusedClip>,
    examples: Vec<Example>,
    val: Vec<ValClip>,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    /// Loads the train and val splits of `manifest` (splits must be assigned)
    /// and initializes a fresh model, or continues from `resume`.
    pub fn new(
        config: TrainConfig,
        manifest: &DatasetManifest,
        vocab: Vocabulary,
        resume: Option<Checkpoint>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let selection = &config.feature_selection;
        let model_config = ModelConfig {
            fused_dim: manifest
                .profile()
                .fused_dim(selection)
                .ok_or_else(|| TrainError::Config("feature selection has a kind without a known dim".into()))?,
            hidden: config.hidden,
            embed_dim: config.embed_dim,
            vocab_size: vocab.len(),
            attend: config.attend,
        };

        let mut clips = Vec::new();
        let mut examples = Vec::new();
        for entry in manifest.split(Split::Train) {
            let clip = manifest.load_clip(entry, selection)?;
            for caption in &entry.captions {
                examples.push(Example { clip: clips.len(), target: vocab.encode(caption) });
            }
            clips.push(clip);
        }
        if examples.is_empty() {
            return Err(TrainError::Contract("the train split is empty".into()));
        }
        let val = manifest
            .split(Split::Val)
            .map(|e| {
                Ok(ValClip {
                    video_id: e.video_id.clone(),
                    clip: manifest.load_clip(e, selection)?,
                    references: e.captions.clone(),
                })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;

        let (model, adam, epoch) = match resume {
            Some(ck) => {
                if ck.model.config != model_config {
                    return Err(TrainError::Config("checkpoint model shape differs from the config".into()));
                }
                if ck.vocab.fingerprint() != vocab.fingerprint() {
                    return Err(TrainError::Config("checkpoint vocabulary differs from the training vocabulary".into()));
                }
                if ck.feature_selection != *selection || ck.seed != config.seed {
                    return Err(TrainError::Config("checkpoint seed or feature selection differs from the config".into()));
                }
                let adam = ck.optimizer.ok_or_else(|| TrainError::Config("checkpoint has no optimizer state".into()))?;
                (ck.model, adam, ck.epoch)
            }
            None => {
                let model = S2vtModel::init(model_config, &mut seeded_rng(config.seed));
                let adam = AdamState::for_model(&model.params, config.adam);
                (model, adam, 0)
            }
        };
        let pool = if config.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.workers)
                    .build()
                    .map_err(|e| TrainError::Config(format!("cannot start {} workers: {e}", config.workers)))?,
            )
        } else {
            None
        };
        Ok(Self { config, vocab, model, adam, epoch, clips, examples, val, pool })
    }

    pub fn model(&self) -> &S2vtModel<f32> {
        &self.model
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            vocab: self.vocab.clone(),
            feature_selection: self.config.feature_selection.clone(),
            seed: self.config.seed,
            split_ratios: self.config.split_ratios,
            epoch: self.epoch,
            optimizer: Some(self.adam.clone()),
            adam: self.adam.config,
        }
    }

    fn eval_due(&self) -> bool {
        let last = self.epoch == self.config.epochs;
        last || (self.config.eval_every > 0 && self.epoch.is_multiple_of(self.config.eval_every))
    }

    /// Greedy-decodes the val split and scores it; `None` when it is empty.
    pub fn validate(&self) -> Result<Option<MetricReport>, TrainError> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let captioner = Captioner::new(&self.model, &self.vocab)?;
        let items = self
            .val
            .iter()
            .map(|v| {
                let rec = captioner.caption(&v.video_id, &v.clip, Decoder::Greedy)?;
                Ok(EvalItem { video_id: rec.video_id, hypothesis: rec.caption, references: v.references.clone() })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Ok(Some(metrics::evaluate(&EvalCorpus::new(items)?)))
    }

    /// Trains one epoch; validates when an evaluation is due.
    pub fn run_epoch(&mut self) -> Result<EpochLog, TrainError> {
        let start = Instant::now();
        let epoch = self.epoch;
        let batches = make_batches(&self.examples, self.config.batch_size, self.config.seed, epoch);
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let at = |source: TrainError| TrainError::At { epoch, batch: b, source: Box::new(source) };
            let clips: Vec<_> = batch
                .examples
                .iter()
                .map(|&i| {
                    let c = &self.clips[self.examples[i].clip];
                    (&c.values, c.valid_steps)
                })
                .collect();
            let plan = DropoutPlan { rate: self.config.dropout, seed: self.config.seed, epoch, batch: b };
            let (loss, mut grads) =
                batch_loss_and_grads(&self.model, &clips, &batch.targets, plan, self.pool.as_ref()).map_err(at)?;
            if !loss.is_finite() {
                return Err(at(TrainError::NonFinite { what: "loss".into(), step: self.adam.t + 1 }));
            }
            if let Some(max) = self.config.clip_norm {
                let norm = grads.global_norm();
                if norm > max {
                    grads.scale((max / norm) as f32);
                }
            }
            adam_step(&mut self.model.params, &grads, &mut self.adam, self.config.learning_rate).map_err(at)?;
            total += loss * batch.examples.len() as f64;
        }
        self.epoch += 1;
        let val_metrics = if self.eval_due() { self.validate()? } else { None };
        Ok(EpochLog {
            epoch,
            mean_loss: total / self.examples.len() as f64,
            val_metrics,
            wall_ms: start.elapsed().as_millis() as u64,
        })
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.s2vt";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub logs: Vec<EpochLog>,
}

/// Runs epochs up to `config.epochs`, appending to `out/metrics.jsonl` and
/// rewriting `out/checkpoint.s2vt` at every evaluation and at the end.
pub fn train_loop(
    config: &TrainConfig,
    manifest: &DatasetManifest,
    vocab: &Vocabulary,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let manifest = split_dataset(manifest, config.split_ratios, config.seed)?;
    let resume = config.resume.as_ref().map(Checkpoint::load).transpose()?;
    let resuming = resume.is_some();
    let mut trainer = Trainer::new(config.clone(), &manifest, vocab.clone(), resume)?;

    let out = &config.out;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let log_path = out.join(METRICS_FILE);
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resuming)
        .truncate(!resuming)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    let ck_path = out.join(CHECKPOINT_FILE);

    let mut logs = Vec::new();
    while trainer.epoch() < config.epochs {
        let entry = trainer.run_epoch()?;
        writeln!(log, "{}", serde_json::to_string(&entry).expect("log serializes")).map_err(io_err(&log_path))?;
        if trainer.eval_due() {
            trainer.checkpoint().save(&ck_path)?;
        }
        on_epoch(&entry);
        logs.push(entry);
    }
    let checkpoint = trainer.checkpoint();
    checkpoint.save(&ck_path)?;
    Ok(TrainOutcome { checkpoint, checkpoint_path: ck_path, logs })
}
