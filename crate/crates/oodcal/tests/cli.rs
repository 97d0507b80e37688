//! Binary-level smoke tests: every subcommand exercised through real argv,
//! asserting on exit codes, run-directory layout, and artifact contents.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

/// A deliberately tiny run so each spawned process finishes in well under a
/// second: 4 classes, 20 train utterances per class, a 16x24 encoder,
/// 6 epochs, 10 MC passes.
const TINY_CONFIG: &str = r#"{
  "seed": 3,
  "data": {
    "kind": "synthetic",
    "num_classes": 4,
    "samples_per_class": 20,
    "overlap": 0.3,
    "len_range": [3, 7],
    "ood_samples": 40,
    "seed": 5
  },
  "model": { "embed_dim": 16, "hidden_dim": 24 },
  "train": { "max_epochs": 6 },
  "mc": { "n": 10 },
  "lof_k": 10,
  "runs": 1
}"#;

fn oodcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodcal"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn run_ok(args: &[&str]) -> String {
    let out = oodcal(args);
    assert!(
        out.status.success(),
        "oodcal {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn first_line(path: &Path) -> String {
    String::from_utf8(read(path))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_owned()
}

#[test]
fn train_writes_the_full_run_directory() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), TINY_CONFIG);
    let out = dir.path().join("run");
    run_ok(&[
        "train",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--runs",
        "2",
    ]);

    for file in [
        "config.echo",
        "vocab.json",
        "checkpoint.json",
        "checkpoint_1.json",
        "train_log.csv",
        "train_log_1.csv",
        "scores/plain_run0.csv",
        "scores/bayes_run0.csv",
        "scores/plain_run1.csv",
        "scores/bayes_run1.csv",
        "plots/confidence_hist.csv",
        "plots/confidence_hist.svg",
        "reports/report.json",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }

    let report: serde_json::Value =
        serde_json::from_slice(&read(&out.join("reports/report.json"))).unwrap();
    assert_eq!(report["num_classes"], 4);
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn same_seed_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), TINY_CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    }
    for file in ["checkpoint.json", "vocab.json", "scores/plain_run0.csv", "scores/bayes_run0.csv"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file} diverged");
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), TINY_CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["train", "--config", &cfg, "--out", a.to_str().unwrap()]);
    run_ok(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "9",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_ne!(
        read(&a.join("checkpoint.json")),
        read(&b.join("checkpoint.json")),
        "a different master seed should change the trained model"
    );
}

#[test]
fn config_echo_replays_the_run() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), TINY_CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["train", "--config", &cfg, "--out", a.to_str().unwrap()]);
    run_ok(&[
        "train",
        "--config",
        a.join("config.echo").to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(
        read(&a.join("checkpoint.json")),
        read(&b.join("checkpoint.json")),
        "replaying the echoed config should retrain the identical model"
    );
}

#[test]
fn eval_honors_checkpoint_and_detector_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), TINY_CONFIG);
    let trained = dir.path().join("trained");
    run_ok(&["train", "--config", &cfg, "--out", trained.to_str().unwrap()]);

    let eval_out = dir.path().join("eval");
    run_ok(&[
        "eval",
        "--config",
        &cfg,
        "--checkpoint",
        trained.to_str().unwrap(),
        "--detector",
        "msp",
        "--mc-n",
        "5",
        "--mc-p",
        "0.5",
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_slice(&read(&eval_out.join("reports/report.json"))).unwrap();
    let detectors: Vec<&String> = report["runs"][0]["detectors"]
        .as_object()
        .unwrap()
        .keys()
        .collect();
    assert_eq!(detectors, ["msp", "msp+bayes"]);
    assert_eq!(report["config"]["mc"]["n"], 5);
    assert_eq!(report["config"]["mc"]["p"], 0.5);

    let plain_out = dir.path().join("eval_plain");
    run_ok(&[
        "eval",
        "--config",
        &cfg,
        "--checkpoint",
        trained.to_str().unwrap(),
        "--detector",
        "entropy",
        "--no-bayes",
        "--out",
        plain_out.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_slice(&read(&plain_out.join("reports/report.json"))).unwrap();
    let detectors: Vec<&String> = report["runs"][0]["detectors"]
        .as_object()
        .unwrap()
        .keys()
        .collect();
    assert_eq!(detectors, ["entropy"]);
    assert!(plain_out.join("scores/plain_run0.csv").exists());
    assert!(!plain_out.join("scores/bayes_run0.csv").exists());
}

#[test]
fn analysis_subcommands_write_their_csvs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), TINY_CONFIG);
    let trained = dir.path().join("trained");
    run_ok(&["train", "--config", &cfg, "--out", trained.to_str().unwrap()]);
    let ckpt = trained.to_str().unwrap();

    let sweep_out = dir.path().join("sweep");
    run_ok(&[
        "sweep",
        "--config",
        &cfg,
        "--checkpoint",
        ckpt,
        "--detector",
        "msp",
        "--ps",
        "0.3,0.7",
        "--ns",
        "1,5",
        "--out",
        sweep_out.to_str().unwrap(),
    ]);
    let sweep_csv = sweep_out.join("sweep.csv");
    assert_eq!(first_line(&sweep_csv), "p,N,ood_f1,ood_recall,ind_f1,ind_acc");
    // 2 dropout values x 2 ensemble sizes, plus the header.
    assert_eq!(String::from_utf8(read(&sweep_csv)).unwrap().lines().count(), 5);

    let kl_out = dir.path().join("kl");
    run_ok(&[
        "kl",
        "--config",
        &cfg,
        "--checkpoint",
        ckpt,
        "--ns",
        "1,5",
        "--mc-p",
        "0.6",
        "--out",
        kl_out.to_str().unwrap(),
    ]);
    let kl_csv = kl_out.join("kl.csv");
    assert_eq!(first_line(&kl_csv), "split,N,mean,median");
    // ind and ood rows for each of the 2 ensemble sizes, plus the header.
    assert_eq!(String::from_utf8(read(&kl_csv)).unwrap().lines().count(), 5);

    let bench_out = dir.path().join("bench");
    run_ok(&[
        "bench",
        "--config",
        &cfg,
        "--checkpoint",
        ckpt,
        "--detector",
        "entropy",
        "--ns",
        "0,1,5",
        "--runs",
        "2",
        "--out",
        bench_out.to_str().unwrap(),
    ]);
    let bench_csv = bench_out.join("bench.csv");
    assert_eq!(first_line(&bench_csv), "N,median_seconds,ood_f1");
    assert_eq!(String::from_utf8(read(&bench_csv)).unwrap().lines().count(), 4);
}

#[test]
fn gen_data_emits_a_corpus_the_loader_accepts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), TINY_CONFIG);
    let corpus = dir.path().join("corpus.json");
    run_ok(&["gen-data", "--config", &cfg, "--out", corpus.to_str().unwrap()]);

    let parsed: serde_json::Value = serde_json::from_slice(&read(&corpus)).unwrap();
    for split in ["train", "val", "test", "oos_train", "oos_val", "oos_test"] {
        assert!(parsed[split].is_array(), "corpus lacks the {split} split");
    }

    // The emitted file round-trips through the CLINC ingestion path.
    let clinc_cfg = format!(
        r#"{{
  "seed": 3,
  "data": {{ "kind": "clinc", "path": {}, "variant": "full" }},
  "model": {{ "embed_dim": 16, "hidden_dim": 24 }},
  "train": {{ "max_epochs": 6 }},
  "mc": {{ "n": 10 }},
  "lof_k": 10,
  "runs": 1
}}"#,
        serde_json::to_string(corpus.to_str().unwrap()).unwrap()
    );
    let clinc_path = dir.path().join("clinc_config.json");
    fs::write(&clinc_path, clinc_cfg).unwrap();
    let out = dir.path().join("run");
    run_ok(&[
        "train",
        "--config",
        clinc_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(out.join("reports/report.json").exists());
}

#[test]
fn invalid_configs_fail_without_a_partial_run_dir() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");

    // Semantic error: overlap outside [0, 1].
    let bad = TINY_CONFIG.replace("\"overlap\": 0.3", "\"overlap\": 1.5");
    let bad_path = write_config(dir.path(), &bad);
    let result = oodcal(&["train", "--config", &bad_path, "--out", out.to_str().unwrap()]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("error:"));
    assert!(!out.exists(), "failed run left a partial directory behind");

    // Schema error: unknown top-level field.
    let unknown = TINY_CONFIG.replace("\"seed\": 3", "\"seed\": 3, \"typo_field\": 1");
    let unknown_path = dir.path().join("unknown.json");
    fs::write(&unknown_path, unknown).unwrap();
    let result = oodcal(&[
        "train",
        "--config",
        unknown_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!result.status.success());
    assert!(!out.exists());

    // No output directory at all: the flag and the config field are both
    // absent.
    let cfg = write_config(dir.path(), TINY_CONFIG);
    let result = oodcal(&["train", "--config", &cfg]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("out"));
}
