use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn isodus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isodus"))
        .args(args)
        .output()
        .expect("run isodus")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn verify_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = isodus(&["verify", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("0 failed"));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["passed"], true);
    assert!(report["checks"].as_array().unwrap().len() > 50);
}

#[test]
fn verify_detects_injected_faults() {
    let dir = tempfile::tempdir().unwrap();
    for fault in [r#"{"centering_offset": 1e-3}"#, r#"{"flip_isodus_gradient": true}"#] {
        let cfg = write(dir.path(), "fault.json", fault);
        let out = isodus(&["verify", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(1), "{fault}: {}", stdout(&out));
        assert!(stdout(&out).contains("[FAIL]"));
    }
}

#[test]
fn gen_model_sample_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(isodus(&["gen-model", "--out", d, "--seed", "3"]).status.success());
    let model = read_json(&dir.path().join("model.json"));
    assert!(model.is_object());

    let out = isodus(&["sample", "--out", d, "--seed", "3", "--n", "4000"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let samples = dir.path().join("samples.csv");
    let rows = std::fs::read_to_string(&samples).unwrap().lines().count();
    assert_eq!(rows, 4000);

    let out = isodus(&[
        "fit",
        "--out",
        d,
        "--samples",
        samples.to_str().unwrap(),
        "--model",
        dir.path().join("model.json").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stdout(&out));
    let fit = read_json(&dir.path().join("fit.json"));
    assert_eq!(fit["n"], 4000);
    assert_eq!(fit["nodes"].as_array().unwrap().len(), 10);
    let eps = fit["eps_max"].as_f64().unwrap();
    assert!(eps > 0.0 && eps < 0.2, "eps_max {eps}");
    assert!(fit["nodes"].as_array().unwrap().iter().all(|n| n["status"] == "converged"));
}

#[test]
fn sampling_is_reproducible_by_seed() {
    let dir = tempfile::tempdir().unwrap();
    let read = |seed: &str, sub: &str| {
        let d = dir.path().join(sub);
        let out = isodus(&["sample", "--out", d.to_str().unwrap(), "--seed", seed, "--n", "50"]);
        assert!(out.status.success());
        std::fs::read_to_string(d.join("samples.csv")).unwrap()
    };
    assert_eq!(read("5", "a"), read("5", "b"));
    assert_ne!(read("5", "a"), read("6", "c"));
}

#[test]
fn experiment_writes_artifacts_and_exit_status_follows_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "small.json",
        r#"{"experiment": "incoherence", "n_grid": [300, 3000], "repetitions": 2}"#,
    );
    let out_dir = dir.path().join("out");
    let out = isodus(&["sweep", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(out.status.success(), report["passed"].as_bool().unwrap(), "{}", stdout(&out));
    let csv = std::fs::read_to_string(out_dir.join("records.csv")).unwrap();
    // header plus 2 methods × 2 sizes × 2 repetitions
    assert_eq!(csv.lines().count(), 9);
    assert!(csv.lines().next().unwrap().starts_with("experiment,method,model"));
}

#[test]
fn subcommand_rejects_foreign_experiment_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = isodus(&["bench", "--kind", "sweep-mrd", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not run by this subcommand"));
}

#[test]
fn unknown_config_field_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"experiment": "error-scaling", "repetitons": 3}"#);
    let out = isodus(&["sweep", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("repetitons"));
}
