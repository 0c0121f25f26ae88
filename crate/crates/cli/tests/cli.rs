use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use selfcol_cli::config::ExperimentConfig;

const TINY: &str = r#"
seeds = [0]

[dataset]
n_meshes = 60

[autoencoder]
epochs = 5

[active]
n_init = 200
n_aug = 50
iterations = 1

[active.bootstrap]
epochs = 5

[active.fine_tune]
epochs = 2

[eval]
n_test = 500
n_handle = 10
"#;

fn selfcol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfcol"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_survives_a_toml_round_trip() {
    let cfg = ExperimentConfig::from_toml(TINY).unwrap();
    assert_eq!(cfg.active.n_init, 200);
    assert_eq!(cfg.active.bootstrap.lr, 1e-3);
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert_eq!(ExperimentConfig::from_toml(&ExperimentConfig::desk().to_toml()).unwrap(), ExperimentConfig::desk());
}

#[test]
fn exit_codes_distinguish_config_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seeds = [0]\nnot_a_key = 1\n").unwrap();
    let o = selfcol(&["synth", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = selfcol(&["run", "--profile", "nonsense"]);
    assert_eq!(o.status.code(), Some(1));
    // nothing prepared yet
    let out = dir.path().join("out");
    let o = selfcol(&["run", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = selfcol(&["--bogus-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn selftest_passes() {
    let o = selfcol(&["selftest"]);
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().count() >= 5 && text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

fn file(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());

    ok(&selfcol(&["synth", "--config", c, "--out", o]));
    assert!(file(&out, "data/manifest.json").contains("collision_free"));
    ok(&selfcol(&["train-ae", "--config", c, "--out", o]));
    ok(&selfcol(&["run", "--config", c, "--out", o]));
    for m in ["active_bd", "supv_bd", "supv"] {
        let metrics = file(&out, &format!("runs/seed-0/{m}/metrics.csv"));
        assert_eq!(metrics.lines().count(), 3, "{m}: header plus two iterations");
        assert!(out.join(format!("runs/seed-0/{m}/detector-1.json")).exists());
    }
    let labels: Vec<String> = file(&out, "runs/seed-0/supv/metrics.csv")
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().to_string())
        .collect();
    assert_eq!(labels, ["200", "250"]);

    ok(&selfcol(&["eval-detect", "--out", o, "--seed", "0", "--method", "active+bd", "--n-test", "300"]));
    assert_eq!(file(&out, "runs/seed-0/active_bd/detect-12345.csv").lines().count(), 3);
    ok(&selfcol(&["eval-handle", "--out", o, "--seed", "0", "--method", "supv", "--trials", "4"]));
    assert_eq!(file(&out, "runs/seed-0/supv/handle-12345.csv").lines().count(), 3);
    let o2 = selfcol(&["report", "--out", o]);
    ok(&o2);
    assert!(out.join("report/summary.md").exists());
    assert!(String::from_utf8_lossy(&o2.stdout).contains("active+bd"));
}
