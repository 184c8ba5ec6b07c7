use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use zadiff_cli::commands::{self, Setup};
use zadiff_cli::config::ExperimentConfig;

fn zadiff(dir: &Path, args: &[&str], config: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_zadiff"));
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let path = dir.join("config.json");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.env("RUST_LOG", "warn").output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a CSV written by the tool, provenance comments skipped.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn small(json: &str, out: &Path) -> Setup {
    let mut config: ExperimentConfig = serde_json::from_str(json).unwrap();
    config.out = Some(out.to_path_buf());
    Setup::new(config, 2).unwrap()
}

#[test]
fn generate_default_network() {
    let dir = tempfile::tempdir().unwrap();
    let out = zadiff(dir.path(), &["generate"], None);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let net = json(&dir.path().join("out/network.json"));
    assert_eq!(net["n"], 30);
    assert_eq!(net["rule"], "metropolis");
    assert_eq!(net["c"].as_array().unwrap().len(), 30);
    assert_eq!(net["provenance"]["seed"], 42);
    let v = json(&dir.path().join("out/validation.json"));
    assert_eq!(v["doubly_stochastic"], true);
    for p in v["placements"].as_array().unwrap() {
        assert_eq!(p["report"]["ia_pass"], true);
    }
    let hash = net["provenance"]["config_sha256"].as_str().unwrap();
    assert_eq!(hash, ExperimentConfig::default().hash());
}

#[test]
fn generated_network_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    assert!(zadiff(dir.path(), &["generate"], None).status.success());
    let net = dir.path().join("out/network.json");
    let cfg = format!(r#"{{"network_file": {:?}, "ns_list": [0, 30]}}"#, net);
    let out = zadiff(dir.path(), &["validate"], Some(&cfg));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = json(&dir.path().join("out/validation.json"));
    assert_eq!(v["nodes"], 30);
    assert_eq!(
        v["placements"][1]["aware_set"].as_array().unwrap().len(),
        30
    );
}

#[test]
fn single_node_network() {
    let dir = tempfile::tempdir().unwrap();
    let out = zadiff(
        dir.path(),
        &["generate"],
        Some(r#"{"nodes": 1, "ns_list": [0, 1]}"#),
    );
    assert!(out.status.success());
    let net = json(&dir.path().join("out/network.json"));
    assert_eq!(net["n"], 1);
    assert_eq!(net["edges"].as_array().unwrap().len(), 0);
    assert_eq!(net["c"][0][0], 1.0);
}

#[test]
fn tiny_radius_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = zadiff(dir.path(), &["generate"], Some(r#"{"radius": 0.01}"#));
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("connected"), "{err}");
    assert!(!dir.path().join("out/network.json").exists());
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = zadiff(dir.path(), &["generate"], Some(r#"{"nodse": 30}"#));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));
}

#[test]
fn unstable_step_size_is_reported_before_any_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let out = zadiff(
        dir.path(),
        &["theory"],
        Some(r#"{"mu": 2.5, "iterations": 100000000}"#),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stab"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = zadiff(dir.path(), &["generate", "--seed", "7"], None);
    assert!(out.status.success());
    let net = json(&dir.path().join("out/network.json"));
    assert_eq!(net["provenance"]["seed"], 7);
    let c = ExperimentConfig {
        seed: 7,
        ..ExperimentConfig::default()
    };
    assert_eq!(net["provenance"]["config_sha256"], c.hash());
}

#[test]
fn single_node_theory_floor() {
    let dir = tempfile::tempdir().unwrap();
    let setup = small(
        r#"{"nodes": 1, "ns_list": [1], "pilot_runs": 30}"#,
        dir.path(),
    );
    let t = commands::theory(&setup).unwrap();
    let want = 6e-3 * 1e-4 * 128.0 / (2.0 - 6e-3);
    assert!(((t.msd_floor - want) / want).abs() < 1e-12);
    assert!((t.msd_floor - 3.85e-5).abs() < 1e-7);
}

#[test]
fn rho_opt_ratios_follow_node_counts() {
    let dir = tempfile::tempdir().unwrap();
    let setup = small(
        r#"{"ns_list": [10, 20, 30], "moments": [-0.01, 100.0]}"#,
        dir.path(),
    );
    let t = commands::theory(&setup).unwrap();
    let r: Vec<f64> = t.reports.iter().map(|r| r.rho_opt).collect();
    assert_eq!(r.len(), 3);
    assert!(r[2] > 0.0);
    assert!((r[0] / r[2] - 3.0).abs() < 1e-14);
    assert!((r[1] / r[2] - 1.5).abs() < 1e-14);
    assert_eq!(t.reports[0].phi_min, t.reports[2].phi_min);
    for ns in [10, 20, 30] {
        let rows = csv_rows(&dir.path().join(format!("phi_curve_ns{ns}.csv")));
        assert_eq!(rows.len(), 101);
        assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn noiseless_zero_grid_theory() {
    let dir = tempfile::tempdir().unwrap();
    let setup = small(
        r#"{"nodes": 6, "radius": 0.7, "taps": 8, "sigma_v_sq": 0.0, "iterations": 400,
            "steady_window": 50, "pilot_runs": 4, "ns_list": [3, 6],
            "phi_grid": [0.0, 0.0, 0.0]}"#,
        dir.path(),
    );
    let t = commands::theory(&setup).unwrap();
    assert_eq!(t.msd_floor, 0.0);
    for ns in [3, 6] {
        for row in csv_rows(&dir.path().join(format!("phi_curve_ns{ns}.csv"))) {
            assert_eq!(row[1].parse::<f64>().unwrap(), 0.0);
            assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
        }
    }
}

const SMALL_NET: &str = r#""nodes": 8, "radius": 0.6, "taps": 16, "iterations": 2500,
    "steady_window": 300, "pilot_runs": 8"#;

#[test]
fn zero_attraction_sweep_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let setup = small(
        &format!(r#"{{{SMALL_NET}, "runs": 10, "ns_list": [0, 2, 4, 8], "rho_list": [0.0]}}"#),
        dir.path(),
    );
    let out = commands::sweep(&setup).unwrap();
    let first = &out.sweep.cells[0].result;
    for c in &out.sweep.cells {
        assert_eq!(c.result.steady_msd, first.steady_msd);
    }
    let rows = csv_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[2] == rows[0][2] && r[5] == "10"));
    let svg = std::fs::read_to_string(dir.path().join("sweep.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert_eq!(svg.matches("<circle").count(), 1);
}

#[test]
fn two_point_sweep_matches_floor_at_plain_lms() {
    let dir = tempfile::tempdir().unwrap();
    let setup = small(
        &format!(
            r#"{{{SMALL_NET}, "runs": 40, "ns_list": [0, 8], "rho_list": [2e-6], "write_traces": true}}"#
        ),
        dir.path(),
    );
    let out = commands::sweep(&setup).unwrap();
    assert_eq!(out.sweep.cells.len(), 2);
    let t = commands::theory(&setup).unwrap();
    let plain = out.sweep.cell(0, 2e-6).unwrap();
    assert!(plain.result.converged);
    assert!((plain.result.steady_msd_db - t.msd_floor_db).abs() < 1.0);
    let cmp = out.comparison.unwrap();
    assert_eq!(cmp.rows.len(), 2);
    let traces: Vec<_> = std::fs::read_dir(dir.path().join("traces"))
        .unwrap()
        .collect();
    assert_eq!(traces.len(), 2);
    for name in ["sweep.json", "comparison.json", "comparison.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let doc = json(&dir.path().join("sweep.json"));
    assert_eq!(doc["config"]["out"], Value::Null);
    assert_eq!(doc["w0"].as_array().unwrap().len(), 16);
    assert_eq!(doc["cells"].as_array().unwrap().len(), 2);
}

#[test]
fn ensemble_writes_learning_curve() {
    let dir = tempfile::tempdir().unwrap();
    let setup = small(
        &format!(r#"{{{SMALL_NET}, "runs": 5, "ensemble_ns": 4, "ensemble_rho": 1e-5}}"#),
        dir.path(),
    );
    let r = commands::ensemble(&setup).unwrap();
    assert_eq!(r.aware_set.len(), 4);
    assert_eq!(r.result.run_count, 5);
    let rows = csv_rows(&dir.path().join("ensemble_trace.csv"));
    assert_eq!(rows.len(), 2501);
    assert_eq!(rows[0][0], "0");
    let doc = json(&dir.path().join("ensemble.json"));
    assert_eq!(doc["ns"], 4);
    assert!(doc["steady_msd_db"].as_f64().unwrap() < -30.0);
    assert!(dir.path().join("learning_curve.svg").exists());
}

#[test]
fn csv_files_carry_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let setup = small(
        &format!(r#"{{{SMALL_NET}, "runs": 2, "ns_list": [4], "rho_list": [1e-5]}}"#),
        dir.path(),
    );
    commands::sweep(&setup).unwrap();
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        format!("# config_sha256={}", setup.config.hash())
    );
    assert_eq!(lines.next().unwrap(), "# seed=42");
    assert_eq!(
        lines.next().unwrap(),
        "ns,rho,steady_msd,steady_msd_db,ci_halfwidth,runs"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[1], "1.0000000000000001e-5");
}

#[test]
fn uniform_rule_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = zadiff(
        dir.path(),
        &["validate"],
        Some(r#"{"rule": "uniform", "ns_list": [15]}"#),
    );
    assert!(out.status.success());
    let v = json(&dir.path().join("out/validation.json"));
    let report = &v["placements"][0]["report"];
    assert_eq!(report["ia_pass"], v["doubly_stochastic"]);
    assert!(report["column_sum_deviation"].as_f64().unwrap() <= 1e-12);
}
