use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const SMALL: &str = r#"{
  "n": 400,
  "epochs": 4,
  "warmup_epochs": 1,
  "m": 4,
  "subset_size": 50,
  "batch_size": 32,
  "n_val": 200,
  "n_test": 200
}"#;

fn lwbc(args: &[&str]) -> Output {
    lwbc_env(args, &[])
}

fn lwbc_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lwbc"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("LWBC_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn lwbc")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.json");
    fs::write(&path, SMALL).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            headers.iter().map(String::from).zip(r.iter().map(String::from)).collect()
        })
        .collect()
}

#[test]
fn missing_config_exits_2_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let res = lwbc(&["run", "--config", s(&tmp.path().join("nope.json")), "--out", s(&out)]);
    assert_eq!(code(&res), 2, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"epochs": 2, "learning_rate": 0.1}"#).unwrap();
    let out = tmp.path().join("run");
    let res = lwbc(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("learning_rate"));
    assert!(!out.exists());
}

#[test]
fn unknown_method_exits_2() {
    let tmp = TempDir::new().unwrap();
    let res = lwbc(&["run", "--method", "dro", "--out", s(&tmp.path().join("r"))]);
    assert_eq!(code(&res), 2);
}

#[test]
fn run_writes_every_output_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let res = lwbc(&["run", "--config", s(&cfg), "--seed", "3", "--out", s(dir)]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    for name in [
        "metrics.csv",
        "summary.json",
        "weights_hist.csv",
        "consensus_curve.csv",
        "manifest.json",
        "checkpoint_best.json",
        "checkpoint_final.json",
        "predictions.csv",
        "diagnostics.json",
    ] {
        assert!(a.join(name).is_file(), "{name} missing");
    }
    for name in ["metrics.csv", "summary.json", "predictions.csv", "checkpoint_best.json"] {
        assert_eq!(sha(&a.join(name)), sha(&b.join(name)), "{name} differs");
    }
    assert_eq!(rows(&a.join("metrics.csv")).len(), 4);

    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["n"], 400);
}

#[test]
fn summary_worst_group_matches_predictions() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("r");
    assert_eq!(code(&lwbc(&["run", "--config", s(&cfg), "--method", "erm", "--out", s(&out)])), 0);

    let mut groups: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for row in rows(&out.join("predictions.csv")).into_iter().filter(|r| r["split"] == "test") {
        let e = groups.entry((row["y"].clone(), row["a"].clone())).or_default();
        e.1 += 1;
        if row["pred"] == row["y"] {
            e.0 += 1;
        }
    }
    let worst = groups.values().map(|&(c, n)| c as f64 / n as f64).fold(f64::INFINITY, f64::min);
    let summary = read_json(&out.join("summary.json"));
    let reported = summary["worst_group"].as_f64().unwrap();
    assert!((worst - reported).abs() < 1e-12, "{worst} vs {reported}");
    assert_eq!(summary["method"], "erm");
}

#[test]
fn summary_floats_use_seventeen_digits() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("r");
    assert_eq!(code(&lwbc(&["run", "--config", s(&cfg), "--method", "erm", "--out", s(&out)])), 0);
    let text = fs::read_to_string(out.join("summary.json")).unwrap();
    let line = text.lines().find(|l| l.contains("\"worst_group\"")).unwrap();
    let value = line.split(':').nth(1).unwrap().trim().trim_end_matches(',');
    let mantissa = value.split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17, "{value}");
}

#[test]
fn gradcheck_passes_and_catches_a_flipped_sign() {
    let ok = lwbc(&["gradcheck"]);
    assert_eq!(code(&ok), 0);
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 4, "{stdout}");

    let bad = lwbc(&["gradcheck", "--inject-fault", "kd-sign-flip"]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn gen_data_is_seeded_and_sized() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    let c = tmp.path().join("c.csv");
    for (path, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let res = lwbc(&["gen-data", "--seed", seed, "--n", "400", "--rho", "0", "--out", s(path)]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    assert_eq!(sha(&a), sha(&b));
    assert_ne!(sha(&a), sha(&c));
    let data = rows(&a);
    assert_eq!(data.len(), 400);
    assert!(data.iter().all(|r| r["conflicting"] == "false"));
    assert!(tmp.path().join("a.spec.json").is_file());
}

#[test]
fn gen_data_rejects_out_of_range_rho() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("d.csv");
    let res = lwbc(&["gen-data", "--rho", "0.9", "--out", s(&out)]);
    assert_eq!(code(&res), 2);
    assert!(!out.exists());
}

#[test]
fn imported_data_reproduces_generated_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("train.csv");
    assert_eq!(code(&lwbc(&["gen-data", "--config", s(&cfg), "--seed", "2", "--out", s(&data)])), 0);
    let generated = tmp.path().join("gen");
    let imported = tmp.path().join("imp");
    assert_eq!(code(&lwbc(&["run", "--config", s(&cfg), "--seed", "2", "--out", s(&generated)])), 0);
    let res = lwbc(&["run", "--config", s(&cfg), "--seed", "2", "--data", s(&data), "--out", s(&imported)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(sha(&generated.join("metrics.csv")), sha(&imported.join("metrics.csv")));
}

#[test]
fn missing_data_file_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let res = lwbc(&[
        "run",
        "--config",
        s(&cfg),
        "--data",
        s(&tmp.path().join("none.csv")),
        "--out",
        s(&tmp.path().join("r")),
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn single_value_sweep_matches_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let sweep = tmp.path().join("sweep");
    let run = tmp.path().join("run");
    let res = lwbc(&["sweep", "--config", s(&cfg), "--axis", "lambda", "--values", "0.6", "--out", s(&sweep)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(code(&lwbc(&["run", "--config", s(&cfg), "--out", s(&run)])), 0);
    assert_eq!(
        sha(&sweep.join("lambda_0.6/seed_0/metrics.csv")),
        sha(&run.join("metrics.csv"))
    );
    let agg = rows(&sweep.join("aggregate.csv"));
    assert_eq!(agg.len(), 6);
    assert!(agg.iter().all(|r| r["axis_value"] == "0.6" && r["std"] == "NA"));
}

#[test]
fn m_sweep_runs_each_value() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("sweep");
    let res = lwbc_env(
        &["sweep", "--config", s(&cfg), "--axis", "m", "--values", "1,10,30", "--out", s(&out)],
        &[("LWBC_THREADS", "3")],
    );
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for m in ["1", "10", "30"] {
        assert!(out.join(format!("m_{m}/seed_0/summary.json")).is_file());
    }
    let agg = rows(&out.join("aggregate.csv"));
    for metric in ["overall", "worst_group", "unbiased"] {
        assert_eq!(agg.iter().filter(|r| r["metric"] == metric).count(), 3);
    }
}

#[test]
fn repeated_sweep_reports_sample_std() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("sweep");
    let res = lwbc(&[
        "sweep", "--config", s(&cfg), "--method", "erm", "--axis", "rho", "--values", "0.05", "--repeats", "3",
        "--out", s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let xs: Vec<f64> = (0..3)
        .map(|seed| {
            read_json(&out.join(format!("rho_0.05/seed_{seed}/summary.json")))["best"]["test"]["unbiased"]
                .as_f64()
                .unwrap()
        })
        .collect();
    let mean = xs.iter().sum::<f64>() / 3.0;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    let row = rows(&out.join("aggregate.csv")).into_iter().find(|r| r["metric"] == "unbiased").unwrap();
    assert!((row["mean"].parse::<f64>().unwrap() - mean).abs() < 1e-12);
    assert!((row["std"].parse::<f64>().unwrap() - std).abs() < 1e-12);
}

#[test]
fn invalid_thread_count_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("sweep");
    let res = lwbc_env(
        &["sweep", "--config", s(&cfg), "--axis", "m", "--values", "2", "--out", s(&out)],
        &[("LWBC_THREADS", "zero")],
    );
    assert_eq!(code(&res), 2);
    assert!(!out.exists());
}

#[test]
fn unwritable_output_exits_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let res = lwbc(&["run", "--config", s(&cfg), "--method", "erm", "--out", s(&blocker.join("r"))]);
    assert_eq!(code(&res), 3);
}

#[test]
fn unknown_axis_exits_2() {
    let res = lwbc(&["sweep", "--axis", "gamma", "--values", "1"]);
    assert_eq!(code(&res), 2);
}
