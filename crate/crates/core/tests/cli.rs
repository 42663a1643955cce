use std::path::Path;
use std::process::{Command, Output};

use sparselab::lab::{ExperimentConfig, ExponentSpec, WeightSpec};
use sparselab::normest::EstimatorSettings;
use sparselab::sparse::FamilyKind;

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        scenario: "cli".into(),
        depth: 5,
        exponents: vec![ExponentSpec { p: 2.0, q: 1.25, r: vec![1.2] }],
        families: vec![FamilyKind::Tower, FamilyKind::Random { seed: 9, keep: 0.3 }],
        weights: vec![WeightSpec::Constant { value: 1.0 }, WeightSpec::Power { a: -0.5 }],
        estimator: EstimatorSettings { restarts: 3, ..Default::default() },
        ..ExperimentConfig::battery()
    }
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn sparselab(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sparselab"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("SPARSELAB_THREADS", t);
    }
    cmd.output().unwrap()
}

#[test]
fn commands_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let config = config.to_str().unwrap();
    for (cmd, files) in [
        ("constants", vec!["constants.csv", "config.json"]),
        ("check-theorem", vec!["check_theorem.csv", "check_theorem.json"]),
        ("audit", vec!["audit_summary.csv", "audit_steps.csv", "audit_reports.json"]),
        ("conjecture-probe", vec!["conjecture_probe.csv", "conjecture_summary.json"]),
    ] {
        let out = dir.path().join(cmd);
        let result = sparselab(&[cmd, "--config", config, "--out", out.to_str().unwrap()], None);
        assert_eq!(result.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&result.stderr));
        for f in files {
            assert!(out.join(f).exists(), "{cmd} did not write {f}");
        }
    }
    let table = std::fs::read_to_string(dir.path().join("check-theorem/check_theorem.csv")).unwrap();
    assert!(table.starts_with("scenario,depth,p,q,r,gamma,family,family_hash,weight,seed,restarts,operator"));
    assert_eq!(table.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn sharpness_scan_with_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scan");
    let result = sparselab(&["sharpness-scan", "--depth", "12", "--out", out.to_str().unwrap()], None);
    assert_eq!(result.status.code(), Some(0));
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sharpness_fit.json")).unwrap()).unwrap();
    assert_eq!(fit[0]["depth"], 12);
    assert_eq!(fit[0]["expected_aq"], 1.0);
}

#[test]
fn table_goes_to_stdout_without_out() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let result = sparselab(&["constants", "--config", config.to_str().unwrap(), "--depth", "3"], None);
    assert_eq!(result.status.code(), Some(0));
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.starts_with("scenario,depth,weight,p,q,aq,aq_argmax"));
    assert!(stdout.lines().nth(1).unwrap().starts_with("cli,3,constant(value=1),2,1.25,1,\"(0,0)\""));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let config = config.to_str().unwrap();
    let bad_q = sparselab(&["check-theorem", "--config", config, "--q", "2.5"], None);
    assert_eq!(bad_q.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_q.stderr).contains("config error"));

    let garbled = dir.path().join("garbled.json");
    std::fs::write(&garbled, "{ not json").unwrap();
    let parse = sparselab(&["audit", "--config", garbled.to_str().unwrap()], None);
    assert_eq!(parse.status.code(), Some(2));

    let missing = sparselab(&["constants", "--config", "/nonexistent/config.json"], None);
    assert_eq!(missing.status.code(), Some(2));

    let scan = sparselab(&["sharpness-scan", "--q", "1.2"], None);
    assert_eq!(scan.status.code(), Some(2));
}

#[test]
fn unconverged_rows_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.estimator.iters = 1;
    let config = write_config(dir.path(), &cfg);
    let result = sparselab(&["check-theorem", "--config", config.to_str().unwrap()], None);
    assert_eq!(result.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&result.stderr).contains("did not converge"));
    let probe = sparselab(&["conjecture-probe", "--config", config.to_str().unwrap()], None);
    assert_eq!(probe.status.code(), Some(0));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let config = config.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "4")] {
        let r = sparselab(&["audit", "--config", config, "--seed", "7", "--out", out.to_str().unwrap()], Some(threads));
        assert_eq!(r.status.code(), Some(0));
    }
    for f in ["audit_summary.csv", "audit_steps.csv", "audit_reports.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}
