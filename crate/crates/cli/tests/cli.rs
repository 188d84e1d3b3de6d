use std::fs;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_phikit");

fn phikit(args: &[&str], dir: &std::path::Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("PHIKIT_OUT").output().expect("binary runs")
}

#[test]
fn invalid_config_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "[tolerances]\nreconstruction = -1.0\n").unwrap();
    let out = phikit(&["--config", "run.toml", "verify-all"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tolerances.reconstruction"));
    assert!(!dir.path().join("phikit-out").exists());
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "[grid]\nsamplez = 64\n").unwrap();
    let out = phikit(&["--config", "run.toml", "lp-check"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("samplez"));
}

#[test]
fn bad_grid_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = phikit(&["--grid-overrides", "samples=100", "lp-check"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid"));
}

#[test]
fn empty_experiment_list_writes_only_the_index() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "experiments = []\nout = \"report\"\n").unwrap();
    let out = phikit(&["--config", "run.toml", "verify-all"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let names: Vec<_> = fs::read_dir(dir.path().join("report")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec!["index.json"]);
    let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report/index.json")).unwrap()).unwrap();
    assert_eq!(index["passed"], true);
    assert_eq!(index["experiments"].as_array().unwrap().len(), 0);
}

#[test]
fn printed_config_is_a_valid_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = phikit(&["--seed", "7", "print-config"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    fs::write(dir.path().join("run.toml"), &out.stdout).unwrap();
    let again = phikit(&["--config", "run.toml", "print-config"], dir.path());
    assert_eq!(again.stdout, out.stdout);
    assert!(String::from_utf8_lossy(&out.stdout).contains("seed = 7"));
}

#[test]
fn single_experiment_writes_verdict_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = phikit(&["lp-check", "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r/lp-check/verdict.json")).unwrap()).unwrap();
    assert_eq!(v["experiment"], "lp-check");
    assert_eq!(v["passed"], true);
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    let csv = fs::read_to_string(dir.path().join("r/lp-check/series.csv")).unwrap();
    assert!(csv.starts_with("x,y,series\n"));
    assert!(csv.lines().count() > 1000);
}

#[test]
fn env_sets_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN).arg("lp-check").current_dir(dir.path()).env("PHIKIT_OUT", "from-env").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("from-env/lp-check/verdict.json").exists());
}

#[test]
fn failing_checks_exit_1_and_are_quoted() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "[tolerances]\nlower_bound = 1.5\n").unwrap();
    let out = phikit(&["--config", "run.toml", "lp-check"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("min phi^ on [3/5, 5/3]"));
}
