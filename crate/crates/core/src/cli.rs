//! The `s2vt` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
//! abort (NaN/inf during training). Every command echoes its resolved
//! settings as JSON on standard error before running.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::featio::{parse_selection, read_fvec, synth_features, DatasetManifest, Split, SynthSpec};
use crate::infer::{write_captions, Captioner, DecodeOptions, Decoder, DEFAULT_ALPHA};
use crate::metrics::evaluate_files;
use crate::textkit::Vocabulary;
use crate::train::{split_dataset, train_loop, Checkpoint, TrainConfig, TrainError};

#[derive(Parser, Debug)]
#[command(name = "s2vt", version, about = "Multi-modal S2VT video captioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic feature dataset (FVEC files plus manifest.jsonl).
    SynthFeatures(SynthArgs),
    /// Build a vocabulary from the manifest's training captions.
    BuildVocab(VocabArgs),
    /// Train a model; writes checkpoint.s2vt and metrics.jsonl under --out.
    Train(TrainArgs),
    /// Caption clips with a trained checkpoint (JSON lines).
    Caption(CaptionArgs),
    /// Score captions against manifest references.
    Evaluate(EvaluateArgs),
    /// Print the header and value statistics of an FVEC file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    /// Synthetic dataset spec (JSON); the built-in two-concept spec when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct VocabArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output vocabulary file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Seed for assigning splits when the manifest has none.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    /// JSON file with TrainConfig keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Vocabulary file; built from the training captions when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated feature kinds: object2d, intermediate2d, scene, action3d, audio.
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to continue training from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct CaptionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// train, test, val or all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Beam width; greedy decoding when omitted.
    #[arg(long)]
    beam_width: Option<usize>,
    /// Length-normalization exponent for beam ranking.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Never emit <unk>.
    #[arg(long)]
    suppress_unk: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    /// Caption JSON lines.
    #[arg(long)]
    hyps: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct InspectArgs {
    path: PathBuf,
}

/// A failed command with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure { code: 2, msg: e.to_string() }
}

fn from_train(e: TrainError) -> Failure {
    Failure { code: if e.is_numeric() { 3 } else { 2 }, msg: e.to_string() }
}

fn echo<T: Serialize>(err: &mut dyn Write, command: &str, settings: &T) {
    let json = serde_json::to_string(settings).expect("settings serialize");
    let _ = writeln!(err, "s2vt {command}: {json}");
}

fn write_or_print(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| data(format!("cannot write {}: {e}", p.display()))),
        None => out.write_all(text.as_bytes()).map_err(data),
    }
}

/// Runs the CLI with `argv` (including the program name) and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let rendered = e.render().to_string();
            let _ = if code == 0 { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::SynthFeatures(a) => synth(a, err),
        Command::BuildVocab(a) => build_vocab(a, err),
        Command::Train(a) => train(a, err),
        Command::Caption(a) => caption(a, out, err),
        Command::Evaluate(a) => evaluate(a, out, err),
        Command::Inspect(a) => inspect(a, out, err),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.msg);
            f.code
        }
    }
}

fn synth(a: SynthArgs, err: &mut dyn Write) -> Result<(), Failure> {
    echo(err, "synth-features", &a);
    let spec = match &a.config {
        Some(p) => SynthSpec::load(p).map_err(data)?,
        None => SynthSpec::two_concepts(),
    };
    synth_features(&spec, &a.out, a.seed).map_err(data)?;
    Ok(())
}

/// Captions of the train split, assigning splits with `seed` when needed.
fn train_captions(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<Vec<String>, TrainError> {
    let split = split_dataset(manifest, ratios, seed)?;
    Ok(split.split(Split::Train).flat_map(|e| e.captions.iter().cloned()).collect())
}

fn build_vocab(a: VocabArgs, err: &mut dyn Write) -> Result<(), Failure> {
    echo(err, "build-vocab", &a);
    let manifest = DatasetManifest::load(&a.manifest).map_err(data)?;
    let captions = train_captions(&manifest, TrainConfig::default().split_ratios, a.seed).map_err(from_train)?;
    let vocab = Vocabulary::build(&captions, a.min_count).map_err(data)?;
    vocab.save(&a.out).map_err(data)
}

fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut c = match &a.config {
        Some(p) => TrainConfig::load(p).map_err(|e| match e {
            TrainError::Config(msg) => Failure { code: 1, msg },
            other => from_train(other),
        })?,
        None => TrainConfig::default(),
    };
    if let Some(v) = &a.manifest {
        c.manifest = Some(v.clone());
    }
    if let Some(v) = &a.vocab {
        c.vocab = Some(v.clone());
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.workers {
        c.workers = v;
    }
    if let Some(v) = &a.features {
        c.feature_selection = parse_selection(v).map_err(|e| Failure { code: 1, msg: e.to_string() })?;
    }
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.lr {
        c.learning_rate = v;
    }
    if let Some(v) = &a.out {
        c.out = v.clone();
    }
    if let Some(v) = &a.resume {
        c.resume = Some(v.clone());
    }
    c.validate().map_err(|e| Failure { code: 1, msg: e.to_string() })?;
    Ok(c)
}

fn train(a: TrainArgs, err: &mut dyn Write) -> Result<(), Failure> {
    let config = resolve_train_config(&a)?;
    echo(err, "train", &config);
    let manifest_path =
        config.manifest.as_ref().ok_or_else(|| Failure { code: 1, msg: "a manifest is required (--manifest)".into() })?;
    let manifest = DatasetManifest::load(manifest_path).map_err(data)?;
    let vocab = match &config.vocab {
        Some(p) => Vocabulary::load(p).map_err(data)?,
        None => {
            let captions = train_captions(&manifest, config.split_ratios, config.seed).map_err(from_train)?;
            Vocabulary::build(&captions, config.min_count).map_err(data)?
        }
    };
    let outcome = train_loop(&config, &manifest, &vocab, |log| {
        let _ = writeln!(err, "epoch {} mean_loss {:.6}", log.epoch, log.mean_loss);
    })
    .map_err(from_train)?;
    let _ = writeln!(err, "checkpoint written to {}", outcome.checkpoint_path.display());
    Ok(())
}

fn parse_split(s: &str) -> Result<Option<Split>, Failure> {
    if s == "all" {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|e: crate::featio::FeatError| Failure { code: 1, msg: e.to_string() })
}

fn caption(a: CaptionArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    echo(err, "caption", &a);
    let split = parse_split(&a.split)?;
    let decoder = match a.beam_width {
        Some(width) => Decoder::Beam { width, alpha: a.alpha },
        None => Decoder::Greedy,
    };
    if a.workers == 0 || a.beam_width == Some(0) {
        return Err(Failure { code: 1, msg: "--workers and --beam-width must be at least 1".into() });
    }
    let ck = Checkpoint::load(&a.checkpoint).map_err(from_train)?;
    let manifest = DatasetManifest::load(&a.manifest).map_err(data)?;
    let manifest = split_dataset(&manifest, ck.split_ratios, ck.seed).map_err(from_train)?;
    let mut captioner = Captioner::new(&ck.model, &ck.vocab).map_err(data)?;
    captioner.options = DecodeOptions { suppress_unk: a.suppress_unk, ..DecodeOptions::default() };
    let records = captioner
        .caption_manifest(&manifest, split, &ck.feature_selection, decoder, a.workers)
        .map_err(data)?;
    match &a.out {
        Some(p) => write_captions(&records, p).map_err(data),
        None => {
            let mut text = String::new();
            for r in &records {
                text.push_str(&serde_json::to_string(r).expect("record serializes"));
                text.push('\n');
            }
            write_or_print(None, &text, out)
        }
    }
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    echo(err, "evaluate", &a);
    let manifest = DatasetManifest::load(&a.manifest).map_err(data)?;
    let report = evaluate_files(&a.hyps, &manifest).map_err(data)?;
    if let Some(p) = &a.out {
        write_or_print(Some(p), &(report.to_json() + "\n"), out)?;
    }
    write_or_print(None, &report.table(), out)
}

fn inspect(a: InspectArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    echo(err, "inspect", &a);
    let stream = read_fvec(&a.path).map_err(data)?;
    let values = stream.values().data();
    let mut text = format!("kind: {}\nT: {}\nD: {}\n", stream.kind, stream.frames(), stream.dim());
    if values.is_empty() {
        text.push_str("min: n/a\nmax: n/a\nmean: n/a\n");
    } else {
        let min = values.iter().copied().fold(f32::INFINITY, f32::min);
        let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64;
        text.push_str(&format!("min: {min}\nmax: {max}\nmean: {mean}\n"));
    }
    write_or_print(None, &text, out)
}
