use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use seqdens_cli::{run_from, EXIT_CONFIG, EXIT_FAILURE, EXIT_OK};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("seqdens").chain(args.iter().copied());
    let code = run_from(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const SMOKE: &str = r#"{"seed": 3,
 "dataset": {"source": {"kind": "synthetic", "spec": {"sequences": 20, "steps": 6, "width": 4, "rho": 0.9}}},
 "model": {"family": "F-SRNN", "hidden": 8, "emit_hidden": 8, "latent_dim": 2, "head": {"components": 2}},
 "training": {"total_updates": 3, "batch_size": 4}}"#;

fn frnn_smoke() -> String {
    SMOKE
        .replace("\"F-SRNN\"", "\"F-RNN\"")
        .replace(", \"latent_dim\": 2", "")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let (code, out, err) = run(&["train"]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(out.is_empty());
    assert!(err.contains("--config"), "{err}");
    assert_eq!(run(&["frobnicate"]).0, EXIT_CONFIG);
}

#[test]
fn help_goes_to_stdout() {
    let (code, out, err) = run(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("train") && out.contains("oracle"));
    assert!(err.is_empty());
}

#[test]
fn invalid_config_lists_every_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        r#"{"seed": 1,
 "dataset": {"source": {"kind": "synthetic", "spec": {"sequences": 20, "steps": 6, "width": 4, "rho": 1.5}}},
 "model": {"family": "F-SRNN", "hidden": 0, "emit_hidden": 8},
 "training": {"total_updates": 3, "batch_size": 4}}"#,
    );
    let (code, _, err) = run(&["train", "--config", p(&cfg), "--run-dir", p(&tmp.path().join("r"))]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("rho"), "{err}");
    assert!(err.contains("latent_dim"), "{err}");
    assert!(err.contains("hidden"), "{err}");
}

#[test]
fn unknown_field_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &SMOKE.replace("\"seed\": 3", "\"seed\": 3, \"sede\": 1"));
    assert_eq!(run(&["train", "--config", p(&cfg)]).0, EXIT_CONFIG);
}

#[test]
fn synth_is_deterministic_and_guarded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMOKE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&["synth", "--config", p(&cfg), "--out", p(&a)]).0, EXIT_OK);
    assert_eq!(run(&["synth", "--config", p(&cfg), "--out", p(&b)]).0, EXIT_OK);
    for rel in ["manifest.json", "train/00000.csv", "test/00000.csv"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
    }
    let (code, _, err) = run(&["synth", "--config", p(&cfg), "--out", p(&a)]);
    assert_eq!(code, EXIT_FAILURE);
    assert!(err.contains("--force"), "{err}");
    assert_eq!(run(&["synth", "--config", p(&cfg), "--out", p(&a), "--force"]).0, EXIT_OK);
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn smoke_train_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMOKE);
    let run_dir = tmp.path().join("run");
    let t0 = Instant::now();
    let (code, out, err) = run(&["train", "--config", p(&cfg), "--run-dir", p(&run_dir)]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(t0.elapsed().as_secs_f64() < 10.0);
    assert!(out.contains("F-SRNN"), "{out}");
    for f in ["config.json", "metrics.jsonl", "timing.jsonl", "best.bin", "final.bin", "run.json", "report.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().filter(|l| l.contains("\"total\"")).count(), 3);
    assert!(metrics.lines().any(|l| l.contains("\"valid\"")));

    let (code, _, err) = run(&["train", "--config", p(&cfg), "--run-dir", p(&run_dir)]);
    assert_ne!(code, EXIT_OK);
    assert!(err.contains("--force"), "{err}");

    let (code, out, _) = run(&["eval", p(&run_dir), "--k", "4"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("multi-sample(4)"), "{out}");
    assert!(run_dir.join("eval-multi-sample-4-step-average.json").exists());

    let (code, _, err) = run(&["eval", p(&run_dir), "--convention", "frame-average"]);
    assert_eq!(code, EXIT_OK);
    assert!(err.contains("warning"), "{err}");
}

#[test]
fn eval_without_run_fails() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["eval", p(tmp.path())]).0, EXIT_FAILURE);
}

#[test]
fn flat_family_rejects_mixed_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &frnn_smoke());
    let data = tmp.path().join("data");
    assert_eq!(run(&["synth", "--config", p(&cfg), "--out", p(&data)]).0, EXIT_OK);
    let manifest = data.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    m["kinds"][1] = "binary".into();
    fs::write(&manifest, m.to_string()).unwrap();
    let flat = write_config(
        tmp.path(),
        "flat.json",
        r#"{"seed": 1,
 "dataset": {"source": {"kind": "manifest", "path": "data/manifest.json"}},
 "model": {"family": "RNN-FLAT", "hidden": 8, "emit_hidden": 8},
 "training": {"total_updates": 1, "batch_size": 4}}"#,
    );
    let (code, _, err) = run(&["train", "--config", p(&flat), "--run-dir", p(&tmp.path().join("r"))]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("mixed element kinds"), "{err}");
}

#[test]
fn delta_rnn_needs_leak_and_runs_with_interleave() {
    let tmp = tempfile::tempdir().unwrap();
    let base = frnn_smoke().replace("\"F-RNN\"", "\"DELTA-RNN\"");
    let missing = write_config(tmp.path(), "m.json", &base);
    let (code, _, err) = run(&["train", "--config", p(&missing), "--run-dir", p(&tmp.path().join("m"))]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("leak"), "{err}");

    let ok = write_config(
        tmp.path(),
        "ok.json",
        &base.replace("\"DELTA-RNN\",", "\"DELTA-RNN\", \"leak\": {\"interleave\": {\"u\": 2}},"),
    );
    let (code, out, err) = run(&["train", "--config", p(&ok), "--run-dir", p(&tmp.path().join("ok"))]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("exact"), "{out}");
}

#[test]
fn table_from_three_runs_with_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let bodies = [
        ("frnn", frnn_smoke()),
        ("fsrnn", SMOKE.to_string()),
        (
            "hier",
            frnn_smoke().replace("\"F-RNN\",", "\"RNN-HIER\", \"low_decoder\": \"masked-mlp\","),
        ),
    ];
    let mut dirs = Vec::new();
    for (name, body) in &bodies {
        let cfg = write_config(tmp.path(), &format!("{name}.json"), body);
        let dir = tmp.path().join(name);
        let (code, _, err) = run(&["train", "--config", p(&cfg), "--run-dir", p(&dir)]);
        assert_eq!(code, EXIT_OK, "{name}: {err}");
        dirs.push(dir);
    }
    let mut args = vec!["table", "--csv"];
    args.extend(dirs.iter().map(|d| p(d)));
    let (code, out, err) = run(&args);
    assert_eq!(code, EXIT_OK, "{err}");
    for fam in ["F-RNN", "F-SRNN", "RNN-HIER"] {
        assert!(out.contains(fam), "{out}");
    }
    assert!(out.lines().any(|l| l.contains(',')), "{out}");
}

#[test]
fn table_rejects_mixed_conventions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &frnn_smoke());
    let dir = tmp.path().join("r");
    assert_eq!(run(&["train", "--config", p(&cfg), "--run-dir", p(&dir)]).0, EXIT_OK);
    assert_eq!(run(&["eval", p(&dir), "--convention", "frame-average"]).0, EXIT_OK);
    let (code, _, err) = run(&[
        "table",
        p(&dir.join("report.json")),
        p(&dir.join("eval-exact-frame-average.json")),
    ]);
    assert_ne!(code, EXIT_OK);
    assert!(err.contains("convention"), "{err}");
}

#[test]
fn sweep_writes_nine_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMOKE);
    let root = tmp.path().join("sweep");
    let (code, out, err) = run(&["sweep", "--config", p(&cfg), "--out", p(&root)]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(out.lines().count(), 9);
}
