use std::path::Path;
use std::process::{Command, Output};

fn mfgn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfgn"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"{"dataset": {"molecules": 24}, "train_count": 18, "betas": [1.0], "noise": {"trials": 2},
    "model": {"hidden": 4, "rank": 2, "iterations": 1, "mlp_hidden": 4}, "train": {"epochs": 1}}"#;

#[test]
fn gen_data_is_deterministic_and_seed_dependent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = mfgn(&["gen-data", "--config", &cfg, "--seed", "4"]);
    let b = mfgn(&["gen-data", "--config", &cfg, "--seed", "4"]);
    let c = mfgn(&["gen-data", "--config", &cfg, "--seed", "5"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap().lines().count(), 24);
}

#[test]
fn train_then_eval_reports_the_same_test_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let data = dir.path().join("data.jsonl");
    let ckpt = dir.path().join("model.json");
    let train_out = dir.path().join("train.json");
    let eval_out = dir.path().join("eval.json");
    let p = |x: &Path| x.to_str().unwrap().to_owned();
    assert!(mfgn(&["gen-data", "--config", &cfg, "--out", &p(&data)]).status.success());
    let train = mfgn(&["train", "--config", &cfg, "--data", &p(&data), "--checkpoint", &p(&ckpt), "--out", &p(&train_out)]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let eval = mfgn(&["eval", "--config", &cfg, "--data", &p(&data), "--checkpoint", &p(&ckpt), "--out", &p(&eval_out)]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let read = |x: &Path| -> serde_json::Value { serde_json::from_str(&std::fs::read_to_string(x).unwrap()).unwrap() };
    let (t, e) = (read(&train_out), read(&eval_out));
    assert_eq!(t["rows"]["test"], e["rows"]["test"]);
    assert_eq!(t["dataset_hash"], e["dataset_hash"]);
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"train_count": 0}"#);
    assert_eq!(mfgn(&["gen-data", "--config", &cfg]).status.code(), Some(2));
    let bad = write_config(dir.path(), r#"{"no_such_field": 1}"#);
    assert_eq!(mfgn(&["gen-data", "--config", &bad]).status.code(), Some(2));
    assert_eq!(mfgn(&["gen-data", "--sharing", "extreme"]).status.code(), Some(2));
    assert_eq!(mfgn(&["decode-noise", "--beta", "-1"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let missing = dir.path().join("missing.json");
    let out = mfgn(&["eval", "--config", &cfg, "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_check_passes() {
    let out = mfgn(&["oracle-check", "--seed", "3"]);
    assert!(out.status.success());
    let outcomes: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(outcomes.as_array().unwrap().len(), 4);
    assert!(outcomes.as_array().unwrap().iter().all(|o| o["passed"] == true));
}
