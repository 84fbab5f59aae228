use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::Command;

const MID_GRID: &str =
    "[grid]\nn_axial = 12\nn_radial = 10\nn_angle = 6\n[run]\noracle_entries = 0\n";

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn knudsen(config: &Path, out: &Path, args: &[&str]) -> (i32, Value) {
    let status = Command::new(env!("CARGO_BIN_EXE_knudsen"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
        .status;
    let report = std::fs::read_to_string(out.join("report.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or(Value::Null);
    (status.code().unwrap_or(-1), report)
}

#[test]
fn operator_check_passes_and_reports_every_constant() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), MID_GRID);
    let out = dir.path().join("out");
    let (code, report) = knudsen(&config, &out, &["operator-check"]);
    assert_eq!(code, 0, "{}", report["status"]);
    assert!(report["missing_constants"].as_array().unwrap().is_empty());
    for k in knudsen::cli::REQUIRED_CONSTANTS {
        let entry = &report["constants"][k];
        assert!(!entry["anchor"].as_str().unwrap().is_empty(), "{k}");
        assert!(!entry["value"].is_null(), "{k}");
    }
    for c in report["results"]["checks"].as_array().unwrap() {
        assert_eq!(c["pass"], true, "{}", c["name"]);
    }
    let checks = std::fs::read_to_string(out.join("checks.csv")).unwrap();
    assert!(checks.starts_with("name,value,threshold,pass\n"));
}

#[test]
fn tiny_grid_fails_the_null_space_count() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[grid]\nn_axial = 4\nn_radial = 4\nn_angle = 4\n[run]\noracle_entries = 0\n",
    );
    let (code, report) = knudsen(&config, &dir.path().join("out"), &["operator-check"]);
    assert_eq!(code, 2);
    assert!(report["status"]
        .as_str()
        .unwrap()
        .contains("null space dimension"));
}

#[test]
fn corrupted_cache_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), MID_GRID);
    let cache = dir.path().join("cache");
    let cache_arg = cache.to_str().unwrap();
    let (code, _) = knudsen(
        &config,
        &dir.path().join("a"),
        &["operator-check", "--cache", cache_arg],
    );
    assert_eq!(code, 0);
    let (code, _) = knudsen(
        &config,
        &dir.path().join("b"),
        &["operator-check", "--cache", cache_arg],
    );
    assert_eq!(code, 0);
    for entry in std::fs::read_dir(&cache).unwrap() {
        let path = entry.unwrap().path();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0x5a;
        std::fs::write(&path, bytes).unwrap();
    }
    let (code, report) = knudsen(
        &config,
        &dir.path().join("c"),
        &["operator-check", "--cache", cache_arg],
    );
    assert_ne!(code, 0);
    assert!(report["status"].as_str().unwrap().contains("cache"));
}

#[test]
fn configuration_errors_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "[grid]\nn_axil = 12\n");
    let (code, _) = knudsen(&unknown, &dir.path().join("a"), &["gep"]);
    assert_eq!(code, 4);
    let negative = write_config(dir.path(), "[tolerances]\ntol_op = -1.0\n");
    let (code, _) = knudsen(&negative, &dir.path().join("b"), &["gep"]);
    assert_eq!(code, 4);
    let config = write_config(dir.path(), MID_GRID);
    let (code, _) = knudsen(&config, &dir.path().join("c"), &["solve", "--rho-w", "-1"]);
    assert_eq!(code, 4);
    let (code, _) = knudsen(
        &config,
        &dir.path().join("d"),
        &["solve", "--rho-w", "fast"],
    );
    assert_eq!(code, 4);
}

#[test]
fn gep_table_has_the_origin_row_and_the_sign_rule() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), MID_GRID);
    let out = dir.path().join("out");
    let (code, report) = knudsen(&config, &out, &["gep"]);
    assert_eq!(code, 0, "{}", report["status"]);
    let mut rdr = csv::Reader::from_path(out.join("branches.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers[0], "u");
    let mut origin = false;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let u: f64 = rec[0].parse().unwrap();
        let tau: f64 = rec[1].parse().unwrap();
        assert_eq!(&rec[3], "true");
        if u == 0.0 {
            origin = true;
            assert!(tau.abs() < 1e-8);
        }
    }
    assert!(origin);
    assert!(report["results"]["lambda_ddot_relative"].as_f64().unwrap() < 1e-3);
}

#[test]
fn wall_maxwellian_equal_to_the_bulk_gives_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), MID_GRID);
    let (code, report) = knudsen(&config, &dir.path().join("out"), &["solve", "--u", "0"]);
    assert_eq!(code, 0, "{}", report["status"]);
    let r = &report["results"];
    assert_eq!(r["c1"].as_f64().unwrap(), 0.0);
    assert_eq!(r["c2"].as_f64().unwrap(), 0.0);
    assert_eq!(r["flux_max"].as_f64().unwrap(), 0.0);
}

#[test]
fn off_curve_data_still_produces_a_solution() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), MID_GRID);
    let (code, report) = knudsen(
        &config,
        &dir.path().join("out"),
        &["solve", "--u", "0.02", "--rho-w", "1.0", "--t-w", "1.0"],
    );
    assert_eq!(code, 0, "{}", report["status"]);
    assert_eq!(report["results"]["nonlinear"]["converged"], true);
    let c1 = report["results"]["c1"].as_f64().unwrap();
    let c2 = report["results"]["c2"].as_f64().unwrap();
    assert!(c1.hypot(c2) > 1e-3);
}

#[test]
fn trace_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), MID_GRID);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let (code, report) = knudsen(&config, &a, &["trace-curve", "--u", "-0.02"]);
    assert_eq!(code, 0, "{}", report["status"]);
    let (code, _) = knudsen(&config, &b, &["trace-curve", "--u", "-0.02"]);
    assert_eq!(code, 0);
    let first = std::fs::read(a.join("curve.csv")).unwrap();
    assert_eq!(first, std::fs::read(b.join("curve.csv")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("u,rho_w,T_w,p_w,C1,C2,gamma_fit,iterations,kind\n"));
    assert!(text.lines().any(|l| l.ends_with(",root")));
    assert!(text.lines().any(|l| l.ends_with(",tangent")));
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
}
