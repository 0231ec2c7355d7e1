use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

use nrl_cli::output::{parse_csv, ANALYTIC_HEADER, REFERENCE_HEADER, RESULT_HEADER};
use nrl_cli::{Experiment, ExperimentConfig};

fn nrl(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nrl"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env_remove("NRL_THREADS")
        .output()
        .expect("run nrl")
}

fn write_config(dir: &Path, name: &str, v: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

fn small_sweep() -> serde_json::Value {
    json!({
        "schema_version": 1,
        "target": {"name": "standard_gaussian", "params": {"dim": 2}},
        "observable": {"name": "norm_squared"},
        "perturbation": {"name": "rotation_2d"},
        "scheme": "em",
        "alphas": [0.0, 1.0],
        "dts": [0.05],
        "n_steps": 2000,
        "n_chains": 4,
        "seed": 3
    })
}

#[test]
fn sweep_alpha_writes_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", small_sweep());
    let out = nrl(&["sweep-alpha"], &config);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = parse_csv(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(header, RESULT_HEADER);
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[15] == "2000"));
}

#[test]
fn out_flag_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", small_sweep());
    let run = |seed: &str, file: &str| {
        let path = dir.path().join(file);
        let out = nrl(
            &["sweep-alpha", "--seed", seed, "--out", path.to_str().unwrap()],
            &config,
        );
        assert_eq!(out.status.code(), Some(0));
        assert!(out.stdout.is_empty());
        let (_, rows) = parse_csv(&std::fs::read_to_string(path).unwrap());
        rows.into_iter()
            .map(|mut r| {
                r.pop();
                r
            })
            .collect::<Vec<_>>()
    };
    let a = run("5", "a.csv");
    assert_eq!(a, run("5", "b.csv"));
    assert_ne!(a, run("6", "c.csv"));
}

#[test]
fn invalid_config_exits_with_code_two_and_lists_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_sweep();
    v["alphas"] = json!([]);
    v["n_chains"] = json!(0);
    v["gradient_budget"] = json!(100);
    let config = write_config(dir.path(), "bad.json", v);
    let out = nrl(&["sweep-alpha"], &config);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("n_chains") && err.contains("n_steps"), "{err}");

    let config = write_config(dir.path(), "empty.json", {
        let mut v = small_sweep();
        v["alphas"] = json!([]);
        v
    });
    let out = nrl(&["sweep-alpha"], &config);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("alphas"));
}

#[test]
fn malformed_or_missing_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(nrl(&["analytic"], &path).status.code(), Some(2));
    assert_eq!(
        nrl(&["analytic"], &dir.path().join("absent.json")).status.code(),
        Some(2)
    );
}

#[test]
fn all_blowup_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "blow.json",
        json!({
            "schema_version": 1,
            "target": {"name": "warped_gaussian"},
            "observable": {"name": "norm_squared"},
            "perturbation": {"name": "rotation_2d"},
            "scheme": "em",
            "alphas": [10.0],
            "dts": [1.0],
            "n_steps": 5000,
            "n_chains": 2
        }),
    );
    let out = nrl(&["sweep-alpha"], &config);
    assert_eq!(out.status.code(), Some(3));
    let (_, rows) = parse_csv(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows[0][14], "2");
    assert_eq!(rows[0][5], "");
}

#[test]
fn analytic_and_reference_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "a.json",
        json!({
            "schema_version": 1,
            "target": {"name": "standard_gaussian", "params": {"dim": 2}},
            "observable": {"name": "quadratic", "params": {"M": [[1.0, 0.0], [0.0, 1.0]], "l": [1.0, 0.0]}},
            "perturbation": {"name": "rotation_2d"},
            "alphas": [0.0]
        }),
    );
    let out = nrl(&["analytic"], &config);
    let (header, rows) = parse_csv(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(header, ANALYTIC_HEADER);
    // ‖M‖² + 2‖l‖² at α = 0
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 4.0);

    let config = write_config(
        dir.path(),
        "r.json",
        json!({
            "schema_version": 1,
            "target": {"name": "periodic_2d", "params": {"beta": 10.0}},
            "observable": {"name": "periodic_f"}
        }),
    );
    let out = nrl(&["reference"], &config);
    assert_eq!(out.status.code(), Some(0));
    let (header, rows) = parse_csv(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(header, REFERENCE_HEADER);
    assert_eq!(rows[0][0], "periodic_2d");
}

#[test]
fn analytic_rejects_non_gaussian_target() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "a.json",
        json!({
            "schema_version": 1,
            "target": {"name": "periodic_2d"},
            "observable": {"name": "periodic_f"},
            "alphas": [0.0]
        }),
    );
    assert_eq!(nrl(&["analytic"], &config).status.code(), Some(2));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let config = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            if let Err(e) = Experiment::from_config(&config) {
                panic!("{}: {e}", path.display());
            }
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
