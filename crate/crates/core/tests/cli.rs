use std::path::Path;
use std::process::{Command, Output};

use noisecal::calibrate::Method;
use noisecal::experiment::{ExperimentConfig, ScenarioConfig, SweepConfig};
use noisecal::noisegen::{NoiseSpec, PmdType};

fn noisecal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisecal")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::new(ScenarioConfig::simplex(2, 4, 10_000, 4.0), NoiseSpec::pmd(PmdType::TypeI, 0.35));
    cfg.scenario.n_test = 1000;
    cfg.train.t_max = 3;
    cfg.train.t_w = 1;
    cfg.sweep = SweepConfig {
        methods: vec![Method::MeanBased],
        alpha_grid: vec![0.2],
        lambda_grid: vec![0.15],
        seeds: vec![0],
    };
    let p = dir.join("exp.json");
    std::fs::write(&p, cfg.to_json().unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = noisecal(&["generate", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["train.csv", "val.csv", "test.csv", "metadata.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("sweep");
    let o = noisecal(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 2);
    assert_eq!(std::fs::read_dir(out.join("cells")).unwrap().count(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"scenario": {"k": 2}, "bogus": 1}"#).unwrap();
    assert_eq!(noisecal(&["generate", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(noisecal(&["generate", "--config", missing.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(noisecal(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(noisecal(&["verify", "--check", "no_such_check"]).status.code(), Some(2));
}

#[test]
fn verify_passes_and_catches_disabled_damping() {
    let ok = noisecal(&["verify", "--check", "median_base_case", "--check", "contamination_scatter"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let broken = noisecal(&["verify", "--disable-damping", "--check", "contamination_scatter"]);
    assert_eq!(broken.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&broken.stdout).starts_with("FAIL"));
}

#[test]
fn estimate_reads_points() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pts.csv");
    std::fs::write(&p, "f0,f1\n1,2\n3,4\n5,600\n").unwrap();
    let o = noisecal(&["estimate", "--data", p.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["n"], 3);
    assert_eq!(v["median"], serde_json::json!([3.0, 4.0]));
}
