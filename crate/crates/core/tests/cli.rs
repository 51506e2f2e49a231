//! End-to-end checks of the command-line interface: flag surface, exit codes
//! and report reproducibility through the real binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_transport-count"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("transport-count-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_input(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("spec.json");
    std::fs::write(&path, body).unwrap();
    path
}

const BINARY_CUBE: &str = r#"{"nu": 3, "dims": [2, 2, 2], "margins": [[2, 2], [2, 2], [2, 2]]}"#;

#[test]
fn exact_binary_run_reports_count_eight() {
    let dir = workdir("exact");
    let input = write_input(&dir, BINARY_CUBE);
    let output = binary()
        .args(["--mode", "binary", "--exact", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(doc["exact"]["count"], "8");
    assert_eq!(doc["mode"], "binary");
    assert_eq!(doc["hypothesis"]["satisfied"], false);
    assert!(doc["estimate"]["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn malformed_margins_exit_two() {
    let dir = workdir("malformed");
    let input = write_input(
        &dir,
        r#"{"nu": 3, "dims": [2, 2, 2], "margins": [[4, 4], [4, 4], [4, 3]]}"#,
    );
    let output = binary()
        .args(["--mode", "integer", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let doc: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(doc["error"]["kind"], "UnequalTotals");
}

#[test]
fn verify_integral_block_present() {
    let dir = workdir("verify");
    let input = write_input(&dir, BINARY_CUBE);
    // the identity check compares to the exact count even without --exact
    let output = binary()
        .args(["--mode", "binary", "--verify-integral", "64", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(doc["quadrature"]["grid"], 64);
    assert!(doc["quadrature"]["rel_error"].as_f64().unwrap() <= 1e-3);
    assert!(doc.get("exact").is_none());
}

#[test]
fn budget_exhaustion_exit_four() {
    let dir = workdir("budget");
    let input = write_input(
        &dir,
        r#"{"nu": 3, "dims": [3, 3, 3], "margins": [[9, 9, 9], [9, 9, 9], [9, 9, 9]]}"#,
    );
    let output = binary()
        .args(["--mode", "integer", "--exact", "--budget", "10", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4));
    let doc: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(doc["error"]["kind"], "BudgetExceeded");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = workdir("determinism");
    let input = write_input(&dir, BINARY_CUBE);
    let out1 = dir.join("report1.json");
    let out2 = dir.join("report2.json");
    for out in [&out1, &out2] {
        let status = binary()
            .args(["--mode", "binary", "--exact", "--diagnostics", "--seed", "5", "--input"])
            .arg(&input)
            .arg("--output")
            .arg(out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    let a = std::fs::read(&out1).unwrap();
    let b = std::fs::read(&out2).unwrap();
    assert_eq!(a, b, "reports differ between identical runs");
}

#[test]
fn solver_failure_exit_three() {
    let dir = workdir("infeasible");
    let input = write_input(
        &dir,
        r#"{"nu": 3, "dims": [2, 2, 2], "margins": [[4, 2], [3, 3], [3, 3]]}"#,
    );
    let output = binary()
        .args(["--mode", "binary", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let doc: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(doc["error"]["kind"], "Infeasible");
}
