//! End-to-end tests of the `deglab` binary: exit codes, output files,
//! determinism of reruns with identical configs.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_deglab")
}

fn base_config(out_dir: &Path) -> serde_json::Value {
    serde_json::json!({
        "domain": { "kind": "flat_bottom_rect", "params": { "width": 1.0, "height": 1.0, "r0": 0.4 } },
        "alpha": 0.5,
        "T": 1.0,
        "mesh": { "h": 0.12, "grading_exponent": 2.0 },
        "time": { "steps": 32 },
        "deltas": [0.08, 0.04, 0.02, 0.01],
        "s_grid": [0.5, 1.0, 2.0, 4.0, 8.0],
        "ensemble": { "modes": 3, "samples": 3, "seed": 42 },
        "modes": 5,
        "output_dir": out_dir.to_str().unwrap()
    })
}

fn write_config(dir: &Path, cfg: &serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(subcommand: &str, config: &Path) -> Output {
    Command::new(bin())
        .arg(subcommand)
        .arg("--config")
        .arg(config)
        .arg("--threads")
        .arg("2")
        .output()
        .expect("binary should launch")
}

fn read_outputs(dir: &Path, names: &[&str]) -> Vec<Vec<u8>> {
    names.iter().map(|n| std::fs::read(dir.join(n)).unwrap_or_else(|_| panic!("missing {n}"))).collect()
}

#[test]
fn spectrum_writes_reports_and_passes_checks() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &base_config(&out));
    let res = run("spectrum", &cfg);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(out.join("spectrum.csv")).unwrap();
    // header plus one row per requested mode, LF endings only
    assert_eq!(csv.lines().count(), 6);
    assert!(!csv.contains('\r'));
    assert!(csv.starts_with("n,lambda_n,residual\n"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "spectrum");
    assert_eq!(manifest["all_passed"], true);
    let bounds: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("bounds.json")).unwrap()).unwrap();
    assert!((bounds["hardy_bound"].as_f64().unwrap() - 16.0).abs() < 1e-12);
}

#[test]
fn reruns_are_bitwise_identical() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &base_config(&out));
    let files = ["observability.json", "observability.csv", "manifest.json"];
    assert!(run("observability", &cfg).status.success());
    let first = read_outputs(&out, &files);
    assert!(run("observability", &cfg).status.success());
    let second = read_outputs(&out, &files);
    for ((a, b), name) in first.iter().zip(&second).zip(&files) {
        assert_eq!(a, b, "{name} differs between identical reruns");
    }
}

#[test]
fn sweep_delta_rows_match_configured_deltas() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &base_config(&out));
    let res = run("sweep-delta", &cfg);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "header + one row per delta");
    let first = csv.clone();
    // rerun: everything except the wall-clock column must be unchanged
    assert!(run("sweep-delta", &cfg).status.success());
    let second = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let strip = |text: &str| -> Vec<String> {
        text.lines()
            .map(|l| l.rsplit_once(',').map(|x| x.0).unwrap_or(l).to_string())
            .collect()
    };
    assert_eq!(strip(&first), strip(&second));
}

#[test]
fn empty_delta_list_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = base_config(&out);
    cfg["deltas"] = serde_json::json!([]);
    let path = write_config(tmp.path(), &cfg);
    let res = run("sweep-delta", &path);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("deltas"));
}

#[test]
fn invalid_alpha_is_rejected_with_field_name() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = base_config(&out);
    cfg["alpha"] = serde_json::json!(1.5);
    let path = write_config(tmp.path(), &cfg);
    let res = run("spectrum", &path);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("alpha"));
}

#[test]
fn malformed_json_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("config.json");
    std::fs::write(&path, "{ not json").unwrap();
    let res = run("spectrum", &path);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn missing_config_flag_is_an_error() {
    let res = Command::new(bin()).arg("spectrum").output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("--config"));
}

#[test]
fn check_geometry_reports_classification() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &base_config(&out));
    let res = run("check-geometry", &cfg);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("geometry.json")).unwrap()).unwrap();
    assert_eq!(rep["condition_holds"], true);
    assert!(!rep["gamma_plus_tags"].as_array().unwrap().is_empty());
    assert!(rep["delta0"].as_f64().unwrap() > 0.0);
}

#[test]
fn failed_runtime_check_exits_one() {
    // the oscillating domain violates the sign condition near the origin,
    // so check-geometry completes but reports a failed check
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = base_config(&out);
    cfg["domain"] = serde_json::json!({ "kind": "oscillating", "params": { "r0": 0.5 } });
    let path = write_config(tmp.path(), &cfg);
    let res = run("check-geometry", &path);
    assert_eq!(res.status.code(), Some(1), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["all_passed"], false);
}

#[test]
fn solve_writes_decaying_norm_trace() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &base_config(&out));
    let res = run("solve", &cfg);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(out.join("solution.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 33, "one row per time level");
    let norm = |line: &str| line.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!(norm(rows.last().unwrap()) < norm(rows[0]));
}

#[test]
fn carleman_command_writes_sweep_and_identities() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = base_config(&out);
    cfg["T"] = serde_json::json!(2.0);
    let path = write_config(tmp.path(), &cfg);
    let res = run("carleman", &path);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let ids: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("identities.json")).unwrap())
            .unwrap();
    assert!(ids["max_deviation"].as_f64().unwrap() <= 1e-5);
    let csv = std::fs::read_to_string(out.join("s_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6, "header + one row per s");
}
