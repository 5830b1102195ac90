use std::fs;
use std::path::Path;

use s2vt_core::cli::run_with;
use s2vt_core::featio::{write_fvec, FeatureKind, FeatureStream};
use s2vt_core::numkit::Tensor;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn s2vt(args: &[&str]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("s2vt").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    Output { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn inspect_reports_shape_and_range() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.fvec");
    let values = Tensor::from_vec(3, 4, (0..12).map(|v| v as f32 - 2.0).collect()).unwrap();
    write_fvec(&FeatureStream::new(FeatureKind::Scene, values).unwrap(), &path).unwrap();
    let o = s2vt(&["inspect", p(&path)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(o.stdout, "kind: scene\nT: 3\nD: 4\nmin: -2\nmax: 9\nmean: 3.5\n");
    assert!(o.stderr.starts_with("s2vt inspect: {"));
}

#[test]
fn inspect_empty_audio_stream() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("silent.fvec");
    write_fvec(&FeatureStream::new(FeatureKind::Audio, Tensor::zeros(0, 1024)).unwrap(), &path).unwrap();
    let o = s2vt(&["inspect", p(&path)]);
    assert_eq!(o.code, 0);
    assert!(o.stdout.contains("T: 0\nD: 1024\nmin: n/a"));
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    assert_eq!(s2vt(&["train", "--bogus"]).code, 1);
    assert_eq!(s2vt(&[]).code, 1);
    assert_eq!(s2vt(&["inspect", "/nonexistent/clip.fvec"]).code, 2);
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.fvec");
    fs::write(&junk, b"not a feature file").unwrap();
    let o = s2vt(&["inspect", p(&junk)]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("error:"));
}

#[test]
fn help_lists_commands_and_flags() {
    let top = s2vt(&["--help"]);
    assert_eq!(top.code, 0);
    for cmd in ["synth-features", "build-vocab", "train", "caption", "evaluate", "inspect"] {
        assert!(top.stdout.contains(cmd), "missing {cmd}");
    }
    let train = s2vt(&["train", "--help"]).stdout;
    for flag in ["--config", "--manifest", "--vocab", "--seed", "--workers", "--features", "--resume"] {
        assert!(train.contains(flag), "missing {flag}");
    }
    let caption = s2vt(&["caption", "--help"]).stdout;
    for flag in ["--beam-width", "--alpha", "--split", "--checkpoint"] {
        assert!(caption.contains(flag), "missing {flag}");
    }
}

fn synth(dir: &Path, clips: usize) -> std::path::PathBuf {
    let spec = dir.join("spec.json");
    let json = serde_json::json!({
        "clips": clips,
        "concepts": [
            {"name": "cook", "captions": ["a man is cooking food"]},
            {"name": "run", "captions": ["a dog is running outside"]}
        ],
        "streams": [{"kind": "object2d", "dim": 16, "frames": 40}]
    });
    fs::write(&spec, json.to_string()).unwrap();
    let data = dir.join("data");
    let o = s2vt(&["synth-features", "--config", p(&spec), "--seed", "1", "--out", p(&data)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    data.join("manifest.jsonl")
}

#[test]
fn evaluating_references_against_themselves_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 6);
    let hyps = dir.path().join("hyps.jsonl");
    let lines: Vec<String> = fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            serde_json::json!({"video_id": v["video_id"], "caption": v["captions"][0]}).to_string()
        })
        .collect();
    fs::write(&hyps, lines.join("\n") + "\n").unwrap();
    let report = dir.path().join("report.json");
    let o = s2vt(&["evaluate", "--hyps", p(&hyps), "--manifest", p(&manifest), "--out", p(&report)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("BLEU1"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["bleu1"], 1.0);
    assert_eq!(r["bleu4"], 1.0);
    assert_eq!(r["rouge_l"], 1.0);
    assert_eq!(r["count"], 6);
}

#[test]
fn evaluate_rejects_unknown_video_ids() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 2);
    let hyps = dir.path().join("hyps.jsonl");
    fs::write(&hyps, "{\"video_id\": \"nope\", \"caption\": \"a dog\"}\n").unwrap();
    assert_eq!(s2vt(&["evaluate", "--hyps", p(&hyps), "--manifest", p(&manifest)]).code, 2);
}

#[test]
fn full_pipeline_runs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 10);
    let vocab = dir.path().join("vocab.json");
    let o = s2vt(&["build-vocab", "--manifest", p(&manifest), "--out", p(&vocab)]);
    assert_eq!(o.code, 0, "{}", o.stderr);

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"hidden": 8, "embed_dim": 8, "batch_size": 4}"#).unwrap();
    let run = dir.path().join("run");
    let o = s2vt(&[
        "train", "--config", p(&cfg), "--manifest", p(&manifest), "--vocab", p(&vocab),
        "--epochs", "2", "--workers", "2", "--out", p(&run),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stderr.contains("\"epochs\":2") && o.stderr.contains("\"workers\":2"), "{}", o.stderr);
    assert_eq!(fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(), 2);

    let caps = dir.path().join("caps.jsonl");
    let ckpt = run.join("checkpoint.s2vt");
    let o = s2vt(&[
        "caption", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--split", "all",
        "--beam-width", "3", "--out", p(&caps),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(fs::read_to_string(&caps).unwrap().lines().count(), 10);

    let o = s2vt(&["evaluate", "--hyps", p(&caps), "--manifest", p(&manifest)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("CIDEr"));
}

#[test]
fn train_divergence_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 6);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"hidden": 8, "embed_dim": 8, "batch_size": 2, "dropout": 0.0}"#).unwrap();
    let o = s2vt(&[
        "train", "--config", p(&cfg), "--manifest", p(&manifest), "--lr", "1e38", "--epochs", "5",
        "--out", p(&dir.path().join("run")),
    ]);
    assert_eq!(o.code, 3, "{}", o.stderr);
}

#[test]
fn invalid_train_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 4);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"learning_rat": 0.1}"#).unwrap();
    let o = s2vt(&["train", "--config", p(&cfg), "--manifest", p(&manifest)]);
    assert_eq!(o.code, 1, "{}", o.stderr);
}
