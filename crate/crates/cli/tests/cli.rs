use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn polyelast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyelast")).args(args).output().expect("binary runs")
}

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_names_the_path() {
    let o = polyelast(&["run", "--config", "/definitely/not/here.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/definitely/not/here.toml"), "{}", stderr(&o));
}

#[test]
fn low_growth_exponent_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p4.toml");
    std::fs::write(&cfg, "[model]\np = 4.0\n").unwrap();
    let o = polyelast(&["check-energy", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("p = 4"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(polyelast(&["run", "--seed", "minus-one"]).status.code(), Some(1));
    assert_eq!(polyelast(&["--help"]).status.code(), Some(0));
}

#[test]
fn run_help_documents_csv_columns() {
    let o = polyelast(&["run", "--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains(&polyelast_core::harness::RUN_CSV_HEADER.join(", ")), "{text}");
}

#[test]
fn solver_failure_exits_two_and_keeps_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tight.toml");
    std::fs::write(&cfg, "[solver]\nmax_newton_iterations = 1\nfallback_iterations = 1\n").unwrap();
    let out = dir.path().join("out");
    let o = polyelast(&["run", "--quiet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn run_writes_csv_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let o = polyelast(&["run", "--quiet", "--config", default_config().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let csv = std::fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
    assert!(dir.path().join("snapshots/v_000004.bin").exists());
}

#[test]
fn checks_pass_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["check-energy", "check-ops"] {
        let o = polyelast(&[cmd, "--quiet", "--seed", "3", "--out", dir.path().to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    assert!(dir.path().join("energy_report.json").exists());
    assert!(dir.path().join("operator_report.json").exists());
}

#[test]
fn converge_writes_study_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = polyelast(&["converge", "--config", default_config().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let study: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("study.json")).unwrap()).unwrap();
    assert!(study["slope"].as_f64().unwrap() >= 0.9);
    assert_eq!(std::fs::read_to_string(dir.path().join("study.csv")).unwrap().lines().count(), 5);
    for k in 0..4 {
        assert!(dir.path().join(format!("budget_rung{k}.csv")).exists());
    }
}

#[test]
fn shipped_config_matches_defaults() {
    let mut cfg = polyelast_core::RunConfig::load(&default_config()).unwrap();
    assert_eq!(cfg.output.snapshot_times, vec![0.0, 0.1, 0.2]);
    cfg.output.snapshot_times.clear();
    assert_eq!(cfg, polyelast_core::RunConfig::default());
}
