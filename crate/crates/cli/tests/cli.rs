use std::fs;
use std::process::{Command, Output};

fn akipred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_akipred"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn cohort_help_documents_flags() {
    let out = akipred(&["cohort", "--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--input", "--schema", "--config", "--seed", "--out"] {
        assert!(text.contains(flag), "missing {flag} in:\n{text}");
    }
}

#[test]
fn evaluate_four_row_score_file() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    fs::write(&scores, "label,model\n1,0.9\n0,0.6\n1,0.4\n0,0.2\n").unwrap();
    let out_dir = dir.path().join("eval");
    let out = akipred(&[
        "evaluate",
        "--scores",
        scores.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(out_dir.join("model_comparison.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model,auc,auc_lo,auc_hi,accuracy,f1,recall,brier,brier_calibrated"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let num = |k: usize| row[k].parse::<f64>().unwrap();
    assert_eq!(row[0], "model");
    // TP = FP = FN = TN = 1 at threshold 0.5.
    assert_eq!((num(4), num(5), num(6)), (0.5, 0.5, 0.5));
    assert!((num(1) - 0.75).abs() < 1e-12);
    let brier = (0.1f64.powi(2) + 0.6f64.powi(2) + 0.6f64.powi(2) + 0.2f64.powi(2)) / 4.0;
    assert!((num(7) - brier).abs() < 1e-12);
}

#[test]
fn failures_exit_nonzero_with_stage_tag() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "label,x\n1,0.3\n1,0.5\n").unwrap();
    let out = akipred(&[
        "train",
        "--data",
        bad.to_str().unwrap(),
        "--family",
        "logistic",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train"), "{err}");

    let out = akipred(&[
        "train",
        "--data",
        bad.to_str().unwrap(),
        "--family",
        "perceptron",
    ]);
    assert!(!out.status.success());
}

#[test]
fn config_with_two_sources_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.csv");
    fs::write(&table, "aki\n1\n").unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"schema_version": 1, "input": {"path": "t.csv", "schema": "t.json"}, "synth": {"n": 100}}"#,
    )
    .unwrap();
    let out = akipred(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("either `input` or `synth`"), "{err}");
}

#[test]
fn small_synthetic_run_writes_a_valid_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"schema_version": 1, "seed": 7, "synth": {"n": 400},
            "models": [{"name": "logistic", "family": "logistic"}],
            "evaluation": {"bootstrap": 100}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = akipred(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = akipred::RunManifest::load(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.status, "complete");
    manifest.verify(&out_dir).unwrap();
    let table = fs::read_to_string(out_dir.join("evaluate/model_comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
}
