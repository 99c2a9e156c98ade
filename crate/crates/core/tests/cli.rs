use std::path::Path;
use std::process::{Command, Output};

use onebit_fl::config::ExperimentConfig;
use onebit_fl::federation::RoundMetrics;

fn onebit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onebit-fl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

#[test]
fn run_with_zero_rounds_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = onebit(&["run", "--rounds", "0", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("res/metrics.csv")).unwrap();
    assert_eq!(csv, format!("{}\n", RoundMetrics::CSV_HEADER));
    assert!(dir.path().join("res/summary.json").exists());
    let echoed = std::fs::read_to_string(dir.path().join("res/config.txt")).unwrap();
    assert!(echoed.contains("T = 0"));
}

#[test]
fn run_from_config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.cfg"),
        "# small run\nK = 6\nS = 3\nT = 4\ndim = 5\nsamples_per_client = 40\nbatch_size = 8\nalgorithm = fedavg\n",
    )
    .unwrap();
    let out = onebit(
        &["run", "--config", "exp.cfg", "--algo", "pfed1bs", "--out", "o"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("o/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let echoed = std::fs::read_to_string(dir.path().join("o/config.txt")).unwrap();
    assert!(echoed.contains("algorithm = pfed1bs"));

    // The echoed configuration reproduces itself.
    let again = ExperimentConfig::parse(&echoed).unwrap();
    assert_eq!(again.echo(), echoed);
}

#[test]
fn cost_prints_reduction_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = onebit(&["cost"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("99.69% (99.6875%)"), "{text}");
}

#[test]
fn check_reports_json_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = onebit(&["check"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["all_passed"], true);
    assert!(report["checks"].as_array().unwrap().len() >= 10);
}

#[test]
fn invalid_configuration_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(onebit(&["cost", "--m-ratio", "1.5"], dir.path()).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.cfg"), "learning_rate = 0.1\n").unwrap();
    let out = onebit(&["run", "--config", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("learning_rate") && err.contains("eta"), "{err}");
    assert_eq!(
        onebit(&["run", "--participants", "50"], dir.path()).status.code(),
        Some(1)
    );
}

#[test]
fn numeric_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.cfg"),
        "dataset = synthetic-linear\nmodel = linear\neta = 1e100\nK = 4\nS = 2\nT = 2\n",
    )
    .unwrap();
    let out = onebit(&["run", "--config", "exp.cfg", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
