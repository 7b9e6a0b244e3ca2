use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn kmspc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmspc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) {
    let out = kmspc(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Small synthetic data set under `root/data`.
fn setup() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        &[
            "synth", "--out", "data", "--seed", "3", "--d", "5", "--n-normal", "60", "--n-faulty", "60", "--n-before",
            "40", "--n-after", "40",
        ],
        tmp.path(),
    );
    tmp
}

#[test]
fn synth_calibrate_monitor_report() {
    let tmp = setup();
    let root = tmp.path();
    for f in ["normal.dat", "faulty.dat", "test.dat", "config.json", "manifest.json"] {
        assert!(root.join("data").join(f).is_file(), "{f}");
    }
    ok(&["calibrate", "--config", "data/config.json", "--out", "runs/kpca"], root);
    let manifest = json(&root.join("runs/kpca/manifest.json"));
    assert_eq!(manifest["command"], "calibrate");
    for f in ["model.json", "limits.json", "calibration_chart.csv", "calibration_chart.svg"] {
        assert!(manifest["outputs"].as_array().unwrap().iter().any(|o| o == f), "{f}");
    }

    ok(
        &["monitor", "--model", "runs/kpca/model.json", "--test", "data/test.dat", "--onset", "41", "--out", "runs/mon"],
        root,
    );
    let report = json(&root.join("runs/mon/report.json"));
    let loss = report["cmr"]["combined"]["loss"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&loss));
    assert_eq!(report["cmr"]["onset"], 41);
    // header plus one row per chart sample
    let csv = std::fs::read_to_string(root.join("runs/mon/chart.csv")).unwrap();
    assert_eq!(csv.lines().count(), 81);

    ok(&["report", "--runs", "runs"], root);
    let table = std::fs::read_to_string(root.join("runs/summary.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{table}");
    assert!(rows[0].starts_with("kpca,calibrate,kpca"));
    assert!(rows[1].starts_with("mon,monitor,kpca"));
}

#[test]
fn onset_from_sampling_time() {
    let tmp = setup();
    let root = tmp.path();
    ok(&["calibrate", "--config", "data/config.json", "--model-kind", "pca", "--out", "cal"], root);
    // 2 h at 3-minute sampling: 40 normal samples, fault from sample 41
    let args = [
        "monitor", "--model", "cal/model.json", "--test", "data/test.dat", "--onset-hours", "2", "--sampling-minutes",
        "3", "--out", "mon",
    ];
    ok(&args, root);
    assert_eq!(json(&root.join("mon/report.json"))["cmr"]["onset"], 41);
}

#[test]
fn flags_override_config_file() {
    let tmp = setup();
    let root = tmp.path();
    ok(&["calibrate", "--config", "data/config.json", "--model-kind", "pca", "-H", "2", "--out", "cal"], root);
    let manifest = json(&root.join("cal/manifest.json"));
    assert_eq!(manifest["config"]["h"], 2);
    assert_eq!(manifest["config"]["model"], "pca");
    // untouched settings keep the file's values
    assert_eq!(manifest["config"]["seed"], 3);
    let model = json(&root.join("cal/model.json"));
    assert_eq!((model["model"].as_str(), model["h"].as_u64()), (Some("pca"), Some(2)));
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = setup();
    let root = tmp.path();

    let out = kmspc(&["optimize", "--normal", "data/normal.dat", "--seed", "1", "--out", "r"], root);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error [validate]"));
    assert!(!root.join("r/optim_result.json").exists());

    let out = kmspc(&["calibrate", "--config", "data/config.json", "--normal", "missing.dat", "--out", "r"], root);
    assert_eq!(out.status.code(), Some(4));

    std::fs::write(root.join("huge.json"), r#"{"family":"gaussian","mode":"shared","sigma":1e9,"gamma2":1.0}"#).unwrap();
    let out = kmspc(&["calibrate", "--config", "data/config.json", "--kernel", "huge.json", "--out", "r"], root);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error [fit]"));

    let out = kmspc(&["calibrate", "--config", "data/config.json", "-H", "500", "--out", "r"], root);
    assert_eq!(out.status.code(), Some(2));

    let out = kmspc(&["optimize", "--config", "data/config.json", "--method", "simulated_annealing"], root);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn optimize_writes_trace_and_reruns_from_manifest() {
    let tmp = setup();
    let root = tmp.path();
    let args = ["optimize", "--config", "data/config.json", "--iterations", "10", "--ns", "15", "--out", "opt"];
    ok(&args, root);
    let result = json(&root.join("opt/optim_result.json"));
    assert_eq!(result["method"], "kernel_flows");
    let trace = std::fs::read_to_string(root.join("opt/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 11);
    let manifest = std::fs::read(root.join("opt/manifest.json")).unwrap();
    let model = std::fs::read(root.join("opt/model.json")).unwrap();

    ok(&["optimize", "--config", "opt/manifest.json"], root);
    assert_eq!(std::fs::read(root.join("opt/manifest.json")).unwrap(), manifest);
    assert_eq!(std::fs::read(root.join("opt/model.json")).unwrap(), model);

    // the learned kernel feeds a later calibration
    ok(&["calibrate", "--config", "data/config.json", "--kernel", "opt/optim_result.json", "--out", "cal"], root);
    let cal = json(&root.join("cal/manifest.json"));
    assert_eq!(cal["config"]["kernel"], result["kernel"]);
}

#[test]
fn report_lists_runs_without_manifest() {
    let tmp = setup();
    let root = tmp.path();
    ok(&["calibrate", "--config", "data/config.json", "--model-kind", "pca", "--out", "runs/a"], root);
    ok(&["calibrate", "--config", "data/config.json", "--out", "runs/b"], root);
    std::fs::create_dir_all(root.join("runs/empty")).unwrap();
    ok(&["report", "--runs", "runs", "--out", "summary"], root);
    let text = std::fs::read_to_string(root.join("summary/summary.txt")).unwrap();
    let csv = std::fs::read_to_string(root.join("summary/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(text.contains("empty"), "{text}");

    let out = kmspc(&["report", "--runs", "summary"], root);
    assert_eq!(out.status.code(), Some(2));
}
