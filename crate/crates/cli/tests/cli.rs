use std::path::Path;
use std::process::Command;

use bridgelab::{builtin, resolve_config, run, CliError, ExperimentConfig, RunOptions};

fn bridgelab(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bridgelab")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path.display().to_string()
}

const NEGLOG_BRIDGE: &str = r#"{
    "name": "small",
    "mode": "bridge",
    "potential": {"kind": "neglog", "dim": 1},
    "endpoints": {"x": [1.0], "y": [1.0]},
    "T_values": [2.0, 5.0],
    "outputs": {"csv_dir": "artifacts"}
}"#;

#[test]
fn empty_horizons_exit_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &NEGLOG_BRIDGE.replace("[2.0, 5.0]", "[]"));
    let out = bridgelab(&["run", &path], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("T_values must not be empty"));
    assert!(!dir.path().join("artifacts").exists());
}

#[test]
fn config_validation_rejects_bad_input() {
    let cases = [
        NEGLOG_BRIDGE.replace("[2.0, 5.0]", "[5.0, 2.0]"),
        NEGLOG_BRIDGE.replace("\"y\": [1.0]", "\"y\": [1.0, 2.0]"),
        NEGLOG_BRIDGE.replace("\"x\": [1.0]", "\"x\": [-1.0]"),
        NEGLOG_BRIDGE.replace("\"mode\": \"bridge\"", "\"mode\": \"sideways\""),
        NEGLOG_BRIDGE.replace("\"name\"", "\"extra\": 1, \"name\""),
        NEGLOG_BRIDGE.replace("\"outputs\"", "\"theta_values\": [0.5, 1.0], \"outputs\""),
    ];
    for json in cases {
        let err = ExperimentConfig::from_json(&json).unwrap_err();
        assert!(matches!(err, CliError::Config(_)), "{json}");
        assert_eq!(err.exit_code(), 1);
    }
    assert!(matches!(resolve_config("no-such-builtin"), Err(CliError::Config(_))));
}

#[test]
fn bridge_run_writes_sorted_lf_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), NEGLOG_BRIDGE);
    let out = bridgelab(&["run", &path, "--threads", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let artifacts = dir.path().join("artifacts");
    let summary = std::fs::read_to_string(artifacts.join("small_summary.csv")).unwrap();
    assert!(!summary.contains('\r'));
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows[0], "T,cost,energy,energy_maxdev,distance_t1,cost_exact,energy_exact,solver,iterations");
    assert_eq!(rows.len(), 3);
    let first: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(first[0].parse::<f64>().unwrap(), 2.0);
    let energy: f64 = first[2].parse().unwrap();
    assert!((energy - (1.0 - 5f64.sqrt()) / 2.0).abs() < 1e-8, "{energy}");
    assert!(rows[2].starts_with("5.0"));

    let trajectory = std::fs::read_to_string(artifacts.join("small_T2.csv")).unwrap();
    let mut lines = trajectory.lines();
    assert_eq!(lines.next(), Some("t,x_1,v_1,E,phi_norm"));
    let times: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(times.first(), Some(&0.0));
    assert_eq!(times.last(), Some(&2.0));
    assert!(times.windows(2).all(|w| w[1] > w[0]));

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(artifacts.join("small.json")).unwrap()).unwrap();
    assert_eq!(json["cases"].as_array().unwrap().len(), 2);
    assert_eq!(json["cases"][0]["diagnostics"]["solver"], "Shooting");
}

#[test]
fn out_dir_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), NEGLOG_BRIDGE);
    let target = dir.path().join("elsewhere");
    let out = bridgelab(&["run", &path, "--out-dir", target.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(target.join("small_summary.csv").is_file());
    assert!(target.join("small.json").is_file());
    assert!(!dir.path().join("artifacts").exists());
}

#[test]
fn solver_failure_exit_code_and_keep_going() {
    let dir = tempfile::tempdir().unwrap();
    let failing = NEGLOG_BRIDGE
        .replace("\"y\": [1.0]", "\"y\": [2.0]")
        .replace("\"outputs\"", "\"solver\": {\"method\": \"shooting\", \"max_iter\": 0}, \"outputs\"");
    let path = write_config(dir.path(), &failing);

    let out = bridgelab(&["run", &path], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("artifacts").exists());

    let out = bridgelab(&["run", &path, "--keep-going"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("artifacts/small.json")).unwrap()).unwrap();
    assert!(json["cases"].as_array().unwrap().iter().all(|c| c["ok"] == false));
}

#[test]
fn builtin_neglog_energy_at_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = builtin("neglog-A.1").unwrap();
    let report = run(&config, &RunOptions { out_dir: Some(dir.path().into()), ..RunOptions::default() }).unwrap();
    assert_eq!(report.exit_code(), 0);
    let energy = report.summary.cases[0].diagnostics["energy"].as_f64().unwrap();
    assert!((energy + 0.618034).abs() < 1e-6, "{energy}");
}

#[test]
fn gaussian_builtin_has_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = builtin("gaussian-gamma").unwrap();
    let report = run(&config, &RunOptions { out_dir: Some(dir.path().into()), ..RunOptions::default() }).unwrap();
    let table = &report.tables[0];
    assert_eq!(table.header, ["T", "cost", "excess", "energy", "t", "w2_to_heat_flow", "limit_target", "first_order"]);
    assert_eq!(table.rows.len(), config.horizons.len());
}

#[test]
fn list_and_show() {
    let dir = tempfile::tempdir().unwrap();
    let out = bridgelab(&["list"], dir.path());
    assert!(String::from_utf8_lossy(&out.stdout).lines().any(|l| l == "quadratic-3.1.1"));
    let out = bridgelab(&["show", "verify-neglog"], dir.path());
    let shown = ExperimentConfig::from_json(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(shown, builtin("verify-neglog").unwrap());
}
