//! Exit-code and error-message contract of the binary: 0 on success,
//! 1 on a failed diagnostic suite, 2 on usage errors, and parse errors
//! that point at the offending spot in the config.

use std::process::Command;

fn sdot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sdot"))
}

#[test]
fn version_prints_the_crate_version() {
    let out = sdot().arg("version").output().expect("spawn");
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        env!("CARGO_PKG_VERSION")
    );
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let out = sdot()
        .args(["run", "--config", "/nonexistent/config.json"])
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/config.json"), "stderr: {err}");
}

#[test]
fn malformed_json_reports_line_and_column() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"schema_version\": 1,\n  oops\n}\n").expect("write");
    let out = sdot().arg("run").arg("--config").arg(&path).output().expect("spawn");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "stderr: {err}");
}

#[test]
fn unknown_config_field_is_a_usage_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("unknown.json");
    std::fs::write(
        &path,
        serde_json::to_string(&serde_json::json!({
            "schema_version": 1,
            "seed": 1,
            "source": {"kind": "random_empirical", "count": 4, "dim": 2, "lo": 0.0, "hi": 1.0},
            "target": {"kind": "random", "count": 3, "dim": 2, "lo": 0.0, "hi": 1.0},
            "epsilons": [0.5],
            "algorithms": [{"name": "sgd"}],
            "n_max": 10,
            "snapshots": [10],
            "fuel": "plutonium",
        }))
        .expect("serialize"),
    )
    .expect("write");
    let out = sdot().arg("run").arg("--config").arg(&path).output().expect("spawn");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("fuel"), "stderr: {err}");
}

#[test]
fn snapshot_override_must_parse() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("ok.json");
    std::fs::write(
        &path,
        serde_json::to_string(&serde_json::json!({
            "schema_version": 1,
            "seed": 1,
            "source": {"kind": "random_empirical", "count": 4, "dim": 2, "lo": 0.0, "hi": 1.0},
            "target": {"kind": "random", "count": 3, "dim": 2, "lo": 0.0, "hi": 1.0},
            "epsilons": [0.5],
            "algorithms": [{"name": "sgd"}],
            "n_max": 100,
            "snapshots": [100],
        }))
        .expect("serialize"),
    )
    .expect("write");
    let out = sdot()
        .arg("check")
        .arg("--config")
        .arg(&path)
        .args(["--snapshots", "10,half"])
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("half"), "stderr: {err}");
}
