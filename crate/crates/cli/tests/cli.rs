use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fairkan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairkan")).args(args).output().expect("spawn fairkan")
}

fn ok(args: &[&str]) -> Output {
    let out = fairkan(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn asset(name: &str) -> String {
    format!("{}/assets/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn generate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        ok(&["generate", "--ues", "2", "--bss", "1", "--size", "30", "--seed", "7", "--out-dir", dir.to_str().unwrap()]);
    }
    let da = fs::read(a.join("dataset.jsonl")).unwrap();
    assert_eq!(da, fs::read(b.join("dataset.jsonl")).unwrap());
    // header plus one line per record
    assert_eq!(String::from_utf8(da).unwrap().lines().count(), 31);
}

#[test]
fn zero_size_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let out = fairkan(&["generate", "--size", "0", "--out-dir", dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
    assert!(!dir.exists());
}

#[test]
fn missing_dataset_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let missing = tmp.path().join("nope.jsonl");
    let out = fairkan(&["train-eval", "--dataset", missing.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot load dataset"));
    assert!(!dir.exists());
}

#[test]
fn train_eval_with_zero_epochs_reports_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("data");
    let dir = tmp.path().join("run");
    ok(&["generate", "--ues", "2", "--bss", "1", "--size", "40", "--solver", "grid", "--levels", "8", "--out-dir", data_dir.to_str().unwrap()]);
    let ds = data_dir.join("dataset.jsonl");
    ok(&["train-eval", "--dataset", ds.to_str().unwrap(), "--epochs", "0", "--out-dir", dir.to_str().unwrap()]);
    let metrics = read_json(&dir.join("metrics.json"));
    assert_eq!(metrics["records"], 8);
    assert!(metrics["power_mape"].as_f64().unwrap() > 0.0);
    let csv = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("alpha,n_ue,power_mape,fairness_gap"));
    let ck = read_json(&dir.join("checkpoint_bs0.json"));
    assert_eq!(ck["report"]["loss_history"].as_array().unwrap().len(), 0);
}

#[test]
fn solve_bundled_two_ue_example() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    ok(&["solve", "--example", "--alpha", "0.9", "--solver", "grid", "--levels", "64", "--sweep", "8", "--out-dir", dir.to_str().unwrap()]);
    let s = read_json(&dir.join("solve.json"));
    let p: Vec<f64> = s["result"]["powers"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(p[1], 10.0);
    assert!((p[0] - 5.572264795507177).abs() < 1e-9);
    let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 64);

    // Same instance through the asset files and a config.
    let dir2 = tmp.path().join("files");
    ok(&[
        "--config",
        &asset("two_ue_config.toml"),
        "solve",
        "--topology",
        &asset("two_ue_topology.json"),
        "--alpha",
        "0.9",
        "--solver",
        "grid",
        "--levels",
        "64",
        "--out-dir",
        dir2.to_str().unwrap(),
    ]);
    assert_eq!(fs::read(dir.join("solve.json")).unwrap(), fs::read(dir2.join("solve.json")).unwrap());
}

#[test]
fn reduce_reports_a_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = tmp.path().join("p3.txt");
    fs::write(&graph, "n 3\n0 1\n1 2\n").unwrap();
    let dir = tmp.path().join("out");
    ok(&["reduce", "--graph", graph.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]);
    let r = read_json(&dir.join("reduction.json"));
    assert_eq!(r["correspondence"]["mis_size"], 2);
    assert!(r["correspondence"]["verdict"].is_string());
    let topo = read_json(&dir.join("instance_topology.json"));
    assert_eq!(topo["gains"][0][1], 1e6);

    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "n 2\n0 5\n").unwrap();
    assert!(!fairkan(&["reduce", "--graph", bad.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]).status.success());
}

#[test]
fn explain_writes_formulas_and_op_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("data");
    let run = tmp.path().join("run");
    let dir = tmp.path().join("explain");
    ok(&["generate", "--ues", "2", "--bss", "1", "--size", "60", "--solver", "grid", "--levels", "8", "--out-dir", data_dir.to_str().unwrap()]);
    let ds = data_dir.join("dataset.jsonl");
    ok(&["train-eval", "--dataset", ds.to_str().unwrap(), "--epochs", "20", "--out-dir", run.to_str().unwrap()]);
    let ck = run.join("checkpoint_bs0.json");
    ok(&["explain", "--checkpoint", ck.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]);
    let formulas = fs::read_to_string(dir.join("formulas.txt")).unwrap();
    assert!(formulas.contains("r2"));
    let ops = read_json(&dir.join("ops.json"));
    let total = |k: &str| ops[k].as_u64().unwrap();
    assert!(total("pruned_total") <= total("unpruned_total"));
    assert!(total("symbolic_total") > 0);
    assert!(read_json(&dir.join("symbolic.json"))["layers"].is_array());
}
