use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gcos(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcos"))
        .current_dir(dir)
        .env_remove("GCOS_SEED")
        .args(args)
        .args(["--set", "output_dir=\"out\""])
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

const GCN: &str = r#"{"layers":[
  {"attention":"gcn","aggregation":"sum","activation":"relu","hidden_dim":16,"heads":1,"sampling_rate":1.0},
  {"attention":"gcn","aggregation":"sum","activation":"linear","hidden_dim":7,"heads":1,"sampling_rate":1.0}]}"#;

const SMALL_SEARCH: [&str; 10] = [
    "--set",
    "search.evaluator=\"lookup\"",
    "--set",
    "search.pool_capacity=20",
    "--set",
    "search.max_generations=8",
    "--set",
    "search.outputs=3",
    "--set",
    "search.finetune_best=false",
];

#[test]
fn config_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = gcos(dir.path(), &["config", "dump", "--set", "search.pool_capacity=30"]);
    assert_eq!(code(&first), 0);
    fs::write(dir.path().join("c.json"), &first.stdout).unwrap();
    let second = gcos(dir.path(), &["config", "dump", "--config", "c.json"]);
    assert_eq!(first.stdout, second.stdout);
    let v: Value = serde_json::from_slice(&second.stdout).unwrap();
    assert_eq!(v["search"]["pool_capacity"], 30);
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gcos(dir.path(), &["config", "dump", "--set", "search.bogus=1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gcos"))
        .current_dir(dir.path())
        .env("GCOS_SEED", "42")
        .args(["config", "dump"])
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 42);
}

#[test]
fn zero_epoch_pretrain_writes_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = gcos(dir.path(), &["pretrain", "--set", "training.epochs=0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("out/supernet.json").exists());
}

#[test]
fn missing_dataset_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = gcos(
        dir.path(),
        &[
            "pretrain",
            "--set",
            "dataset.format=\"planetoid\"",
            "--set",
            "dataset.content_path=\"missing/cora.content\"",
            "--set",
            "dataset.cites_path=\"missing/cora.cites\"",
        ],
    );
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing/cora.content"));
}

#[test]
fn lookup_search_is_quick_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let a = gcos(dir.path(), &[&["search"][..], &SMALL_SEARCH[..]].concat());
    assert!(start.elapsed().as_secs() < 10);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let first = fs::read(dir.path().join("out/top.json")).unwrap();
    let b = gcos(dir.path(), &[&["search"][..], &SMALL_SEARCH[..]].concat());
    assert_eq!(code(&b), 0);
    assert_eq!(first, fs::read(dir.path().join("out/top.json")).unwrap());
    let top: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(top["candidates"].as_array().unwrap().len(), 3);

    for name in ["pareto.csv", "generations.csv", "pool.json"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
    let report = gcos(dir.path(), &["report", "pareto", "--input", "out/pool.json"]);
    assert_eq!(code(&report), 0);
    assert_eq!(report.stdout, fs::read(dir.path().join("out/pareto.csv")).unwrap());

    let single = gcos(dir.path(), &[&["search"][..], &SMALL_SEARCH[..], &["--set", "search.outputs=1"][..]].concat());
    assert_eq!(code(&single), 0);
    let top: Value = serde_json::from_slice(&fs::read(dir.path().join("out/top.json")).unwrap()).unwrap();
    assert_eq!(top["candidates"].as_array().unwrap().len(), 1);
}

#[test]
fn search_refuses_a_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = gcos(dir.path(), &["pretrain", "--set", "training.epochs=0", "--set", "supernet.hidden_layers=2"]);
    assert_eq!(code(&o), 0);
    let o = gcos(dir.path(), &["search", "--set", "search.max_generations=1"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fingerprint"));
}

#[test]
fn simulate_reports_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("gcn.json"), GCN).unwrap();
    let a = gcos(dir.path(), &["simulate", "--subnet", "gcn.json"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let first = fs::read(dir.path().join("out/simulate.json")).unwrap();
    let b = gcos(dir.path(), &["simulate", "--subnet", "gcn.json"]);
    assert_eq!(code(&b), 0);
    assert_eq!(first, fs::read(dir.path().join("out/simulate.json")).unwrap());

    let v: Value = serde_json::from_slice(&first).unwrap();
    let cycles = v["report"]["total_cycles"].as_f64().unwrap();
    let latency = v["report"]["latency_seconds"].as_f64().unwrap();
    assert!((latency - cycles / 330e6).abs() <= 1e-15 * latency.max(1.0));

    let mut accel = v["accel"].clone();
    accel["sub_accelerators"][0]["pe_count"] = 5000.into();
    fs::write(dir.path().join("big.json"), accel.to_string()).unwrap();
    let bad = gcos(dir.path(), &["simulate", "--subnet", "gcn.json", "--accel", "big.json"]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("PE budget"));
}

#[test]
fn workload_dump_lists_products() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("gcn.json"), GCN).unwrap();
    let o = gcos(dir.path(), &["workload", "dump", "--subnet", "gcn.json"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let layers = v.as_array().unwrap();
    assert_eq!(layers.len(), 2);
    assert_eq!(layers[0]["ops"][0]["phase"], "aggregation");
    assert_eq!(layers[0]["ops"][1]["n"], 16);
}

#[test]
fn finetune_short_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = gcos(dir.path(), &["finetune", "--set", "training.finetune_epochs=5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&fs::read(dir.path().join("out/finetune.json")).unwrap()).unwrap();
    assert!(v["test_accuracy"].as_f64().unwrap() >= 0.0);
}
