//! Python bindings: tokenization, vocabularies, FVEC I/O, fusion, synthetic
//! data, training, captioning and caption metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use s2vt_core::featio::{self, DatasetManifest, FeatureKind, FeatureProfile, FeatureStream, Split, SynthSpec};
use s2vt_core::infer::{Captioner as CoreCaptioner, DecodeOptions, Decoder, DEFAULT_ALPHA};
use s2vt_core::metrics::{self, EvalCorpus, MetricReport};
use s2vt_core::numkit::Tensor;
use s2vt_core::textkit;
use s2vt_core::train::{self, Checkpoint, TrainConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_kind(name: &str) -> PyResult<FeatureKind> {
    name.parse().map_err(value_err)
}

fn rows_tensor(rows: &[Vec<f32>], dim: Option<usize>) -> PyResult<Tensor<f32>> {
    if rows.is_empty() {
        return Ok(Tensor::zeros(0, dim.unwrap_or(0)));
    }
    Tensor::from_rows(rows).map_err(value_err)
}

fn tensor_rows(t: &Tensor<f32>) -> Vec<Vec<f32>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn report_dict<'py>(py: Python<'py>, r: &MetricReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in [
        ("bleu1", r.bleu1),
        ("bleu2", r.bleu2),
        ("bleu3", r.bleu3),
        ("bleu4", r.bleu4),
        ("meteor", r.meteor),
        ("cider_d", r.cider_d),
        ("rouge_l", r.rouge_l),
    ] {
        d.set_item(k, v)?;
    }
    d.set_item("count", r.count)?;
    Ok(d)
}

/// Lowercases, strips punctuation and splits on whitespace.
#[pyfunction]
fn normalize_tokenize(sentence: &str) -> Vec<String> {
    textkit::normalize_tokenize(sentence)
}

#[pyclass(module = "s2vt", frozen)]
struct Vocabulary {
    inner: textkit::Vocabulary,
}

#[pymethods]
impl Vocabulary {
    #[staticmethod]
    #[pyo3(signature = (captions, min_count = 1))]
    fn build(captions: Vec<String>, min_count: usize) -> PyResult<Self> {
        Ok(Self { inner: textkit::Vocabulary::build(&captions, min_count).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: textkit::Vocabulary::load(path).map_err(value_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(value_err)
    }

    fn encode(&self, sentence: &str) -> Vec<usize> {
        self.inner.encode(sentence)
    }

    fn decode(&self, ids: Vec<usize>) -> PyResult<String> {
        self.inner.decode(&ids).map_err(value_err)
    }

    fn id(&self, token: &str) -> Option<usize> {
        self.inner.id(token)
    }

    fn token(&self, id: usize) -> Option<String> {
        self.inner.token(id).map(str::to_owned)
    }

    #[getter]
    fn tokens(&self) -> Vec<String> {
        self.inner.content_tokens().to_vec()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Vocabulary(size={}, min_count={})", self.inner.len(), self.inner.min_count())
    }
}

/// Reads an FVEC file as `(kind, rows)`.
#[pyfunction]
fn read_fvec(path: PathBuf) -> PyResult<(String, Vec<Vec<f32>>)> {
    let s = featio::read_fvec(path).map_err(value_err)?;
    Ok((s.kind.name().to_owned(), tensor_rows(s.values())))
}

/// Writes `rows` (T x D) as an FVEC file; `dim` is needed only when T = 0.
#[pyfunction]
#[pyo3(signature = (path, kind, rows, dim = None))]
fn write_fvec(path: PathBuf, kind: &str, rows: Vec<Vec<f32>>, dim: Option<usize>) -> PyResult<()> {
    let stream = FeatureStream::new(parse_kind(kind)?, rows_tensor(&rows, dim)?).map_err(value_err)?;
    featio::write_fvec(&stream, path).map_err(value_err)
}

/// Fused feature width for a selection under the canonical dims.
#[pyfunction]
fn fused_dim(selection: Vec<String>) -> PyResult<usize> {
    let kinds = selection.iter().map(|k| parse_kind(k)).collect::<PyResult<Vec<_>>>()?;
    FeatureProfile::canonical().fused_dim(&kinds).ok_or_else(|| value_err("unknown feature dim"))
}

/// Aligns and concatenates `{kind: rows}` into `(40 x D rows, valid_steps)`.
///
/// Stream dims are taken from the data; a missing audio stream is zero-filled
/// at the canonical audio width.
#[pyfunction]
fn fuse(streams: Vec<(String, Vec<Vec<f32>>)>, selection: Vec<String>) -> PyResult<(Vec<Vec<f32>>, usize)> {
    let mut profile = FeatureProfile::canonical();
    let mut built = Vec::with_capacity(streams.len());
    for (kind, rows) in &streams {
        let kind = parse_kind(kind)?;
        let values = rows_tensor(rows, profile.dim(kind))?;
        profile.set(kind, values.cols());
        built.push(FeatureStream::new(kind, values).map_err(value_err)?);
    }
    let kinds = selection.iter().map(|k| parse_kind(k)).collect::<PyResult<Vec<_>>>()?;
    let clip = featio::fuse("python", &built, &kinds, &profile).map_err(value_err)?;
    Ok((tensor_rows(&clip.values), clip.valid_steps))
}

/// Scores `[(hypothesis, [references...]), ...]`.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, pairs: Vec<(String, Vec<String>)>) -> PyResult<Bound<'py, PyDict>> {
    let corpus = EvalCorpus::from_pairs(&pairs).map_err(value_err)?;
    report_dict(py, &metrics::evaluate(&corpus))
}

/// Scores a hypotheses JSONL file against the references in a manifest.
#[pyfunction]
fn evaluate_files<'py>(py: Python<'py>, hyps: PathBuf, manifest: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let manifest = DatasetManifest::load(manifest).map_err(value_err)?;
    report_dict(py, &metrics::evaluate_files(hyps, &manifest).map_err(value_err)?)
}

/// Writes a synthetic dataset under `out`; returns the manifest path.
///
/// `spec_json` defaults to eight clips of two concepts.
#[pyfunction]
#[pyo3(signature = (out, seed = 0, spec_json = None))]
fn synth_features(out: PathBuf, seed: u64, spec_json: Option<&str>) -> PyResult<PathBuf> {
    let spec = match spec_json {
        Some(text) => serde_json::from_str::<SynthSpec>(text).map_err(value_err)?,
        None => SynthSpec::two_concepts(),
    };
    featio::synth_features(&spec, &out, seed).map_err(value_err)?;
    Ok(out.join("manifest.jsonl"))
}

/// Trains from a JSON config (same keys as the CLI config file); returns the
/// per-epoch mean losses. The checkpoint lands in `<out>/checkpoint.s2vt`.
#[pyfunction]
fn train_model(py: Python<'_>, config_json: &str) -> PyResult<Vec<f64>> {
    let config: TrainConfig = serde_json::from_str(config_json).map_err(value_err)?;
    let manifest_path = config.manifest.clone().ok_or_else(|| value_err("config needs a manifest"))?;
    let manifest = DatasetManifest::load(manifest_path).map_err(value_err)?;
    let vocab = match &config.vocab {
        Some(p) => textkit::Vocabulary::load(p).map_err(value_err)?,
        None => {
            let split = train::split_dataset(&manifest, config.split_ratios, config.seed).map_err(value_err)?;
            let captions: Vec<&String> = split.split(Split::Train).flat_map(|e| &e.captions).collect();
            textkit::Vocabulary::build(&captions, config.min_count).map_err(value_err)?
        }
    };
    let outcome = py
        .detach(|| train::train_loop(&config, &manifest, &vocab, |_| {}))
        .map_err(|e| if e.is_numeric() { PyErr::new::<pyo3::exceptions::PyArithmeticError, _>(e.to_string()) } else { value_err(e) })?;
    Ok(outcome.logs.iter().map(|l| l.mean_loss).collect())
}

#[pyclass(module = "s2vt", frozen)]
struct Captioner {
    checkpoint: Checkpoint,
}

#[pymethods]
impl Captioner {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let checkpoint = Checkpoint::load(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self { checkpoint })
    }

    #[getter]
    fn vocabulary(&self) -> Vocabulary {
        Vocabulary { inner: self.checkpoint.vocab.clone() }
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.checkpoint.epoch
    }

    /// Captions one fused clip (`40 x D` rows); greedy unless `beam_width`.
    #[pyo3(signature = (rows, valid_steps, beam_width = None, alpha = DEFAULT_ALPHA))]
    fn caption_clip(
        &self,
        rows: Vec<Vec<f32>>,
        valid_steps: usize,
        beam_width: Option<usize>,
        alpha: f64,
    ) -> PyResult<(String, f64)> {
        let clip = featio::FusedClip::new(rows_tensor(&rows, None)?, valid_steps).map_err(value_err)?;
        let ck = &self.checkpoint;
        let captioner = CoreCaptioner::new(&ck.model, &ck.vocab).map_err(value_err)?;
        let rec = captioner.caption("clip", &clip, decoder(beam_width, alpha)).map_err(value_err)?;
        Ok((rec.caption, rec.score))
    }

    /// Captions a manifest split (`"train"`, `"val"`, `"test"` or `"all"`),
    /// recreating the split the checkpoint was trained with.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (manifest, split = "test", beam_width = None, alpha = DEFAULT_ALPHA, suppress_unk = false, workers = 1))]
    fn caption_manifest(
        &self,
        py: Python<'_>,
        manifest: PathBuf,
        split: &str,
        beam_width: Option<usize>,
        alpha: f64,
        suppress_unk: bool,
        workers: usize,
    ) -> PyResult<Vec<(String, String, f64)>> {
        let split = if split == "all" { None } else { Some(split.parse::<Split>().map_err(value_err)?) };
        let ck = &self.checkpoint;
        let manifest = DatasetManifest::load(manifest).map_err(value_err)?;
        let manifest = train::split_dataset(&manifest, ck.split_ratios, ck.seed).map_err(value_err)?;
        let mut captioner = CoreCaptioner::new(&ck.model, &ck.vocab).map_err(value_err)?;
        captioner.options = DecodeOptions { suppress_unk, ..DecodeOptions::default() };
        let records = py
            .detach(|| {
                captioner.caption_manifest(&manifest, split, &ck.feature_selection, decoder(beam_width, alpha), workers.max(1))
            })
            .map_err(value_err)?;
        Ok(records.into_iter().map(|r| (r.video_id, r.caption, r.score)).collect())
    }
}

fn decoder(beam_width: Option<usize>, alpha: f64) -> Decoder {
    match beam_width {
        Some(width) => Decoder::Beam { width, alpha },
        None => Decoder::Greedy,
    }
}

#[pymodule]
fn s2vt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize_tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(read_fvec, m)?)?;
    m.add_function(wrap_pyfunction!(write_fvec, m)?)?;
    m.add_function(wrap_pyfunction!(fused_dim, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_files, m)?)?;
    m.add_function(wrap_pyfunction!(synth_features, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_class::<Vocabulary>()?;
    m.add_class::<Captioner>()?;
    Ok(())
}
