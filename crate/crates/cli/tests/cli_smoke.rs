//! End-to-end runs of the `fair` binary.

use std::path::Path;
use std::process::Command;

use tempfile::TempDir;

fn fair() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fair"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn simulate_small(dir: &Path) -> (String, String) {
    run_ok(fair().args([
        "simulate",
        "--out-dir",
        dir.to_str().unwrap(),
        "--seed",
        "7",
        "--train-large",
        "60",
        "--train-small",
        "30",
        "--test-per-group",
        "20",
    ]));
    (
        dir.join("train.csv").to_str().unwrap().to_string(),
        dir.join("test.csv").to_str().unwrap().to_string(),
    )
}

#[test]
fn help_lists_subcommands() {
    let out = run_ok(fair().arg("--help"));
    for sub in [
        "simulate",
        "fit",
        "tune",
        "base-case",
        "sweep",
        "real-data",
        "timing",
        "predict",
    ] {
        assert!(out.contains(sub), "missing `{sub}` in help:\n{out}");
    }
}

#[test]
fn simulate_fit_predict_round_trip() {
    let dir = TempDir::new().unwrap();
    let (train, test) = simulate_small(dir.path());

    let model = dir.path().join("model.json");
    run_ok(fair().args([
        "fit",
        "--data",
        &train,
        "--method",
        "fair",
        "--lambda",
        "0.1",
        "--lambda-group",
        "small=0.2",
        "--out",
        model.to_str().unwrap(),
    ]));
    assert!(model.exists());

    let preds = dir.path().join("preds.csv");
    run_ok(fair().args([
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--data",
        &test,
        "--out",
        preds.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&preds).unwrap();
    assert!(text.starts_with("row,group,outcome,prediction"));
    assert_eq!(text.lines().count(), 1 + 40); // header + 20 per group
}

#[test]
fn tune_writes_grid_and_model() {
    let dir = TempDir::new().unwrap();
    let (train, _) = simulate_small(dir.path());
    run_ok(fair().args([
        "tune",
        "--data",
        &train,
        "--method",
        "indicator",
        "--small-label",
        "small",
        "--seed",
        "3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]));
    let grid = std::fs::read_to_string(dir.path().join("tuning.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 13); // header + 13 lambda values
    assert!(dir.path().join("model.json").exists());
}

#[test]
fn base_case_writes_result_files() {
    let dir = TempDir::new().unwrap();
    let out = run_ok(fair().args([
        "base-case",
        "--methods",
        "separate,indicator",
        "--replications",
        "1",
        "--seed",
        "5",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]));
    assert!(out.contains("mean_mse"));
    for file in ["results.csv", "fit_times.csv", "summary.txt"] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
    let results = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn errors_exit_nonzero_with_diagnostic() {
    let out = fair()
        .args(["fit", "--data", "/nonexistent.csv", "--method", "fair", "--lambda", "0.1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error:"), "stderr was: {stderr}");

    let out = fair()
        .args(["sweep", "--axis", "bogus-axis"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
