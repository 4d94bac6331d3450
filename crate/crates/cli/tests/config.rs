use std::process::Command;

use fracshe_cli::{load_and_validate, parse_and_validate, run_in, Kind};

fn regime(model: &str, alpha: f64, dim: usize) -> String {
    format!(
        r#"{{
            "schema_version": 1,
            "grid": {{"dim": {dim}, "half_length": 10, "points_per_axis": 64}},
            "model": {model},
            "solver": {{"alpha": {alpha}, "dt": 0.5, "horizon": 0.5, "sigma": {{"kind": "constant", "c": 1}}}},
            "radii": [1, 2, 4]
        }}"#
    )
}

#[test]
fn white_noise_in_two_dimensions_is_rejected() {
    let err = parse_and_validate(&regime(r#"{"variant": "white_noise"}"#, 1.5, 2), Some(Kind::Clt)).unwrap_err();
    assert!(err.0.iter().any(|v| v.contains("case (ii) requires d = 1")), "{err}");
}

#[test]
fn riesz_beta_equal_to_alpha_is_rejected() {
    let err = parse_and_validate(&regime(r#"{"variant": "riesz_kernel", "beta": 0.8}"#, 0.8, 1), Some(Kind::Clt)).unwrap_err();
    assert!(err.0.iter().any(|v| v.contains("case (i) requires β < α ∧ d")), "{err}");
}

#[test]
fn every_violation_is_listed() {
    let text = r#"{
        "schema_version": 1,
        "grid": {"dim": 1, "half_length": 10, "points_per_axis": 64},
        "model": {"variant": "white_noise"},
        "solver": {"alpha": 0.9, "dt": 0.3, "horizon": 0.5, "sigma": {"kind": "constant", "c": 1}},
        "radii": [9.5],
        "times": [0.5]
    }"#;
    let err = parse_and_validate(text, Some(Kind::Clt)).unwrap_err();
    assert!(err.0.iter().any(|v| v.contains("alpha > 1")), "{err}");
    assert!(err.0.len() >= 1);
    let text = text.replace("0.9", "1.5");
    let err = parse_and_validate(&text, Some(Kind::Clt)).unwrap_err();
    assert!(err.0.iter().any(|v| v.contains("truncation rule")), "{err}");
    assert!(err.0.iter().any(|v| v.contains("dt rule")), "{err}");
}

#[test]
fn normalized_config_hash_is_stable_across_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, regime(r#"{"variant": "riesz_kernel", "beta": 0.5}"#, 1.5, 1)).unwrap();
    let a = load_and_validate(&path, Some(Kind::Tightness)).unwrap();
    assert_eq!(a.times, vec![0.5]);
    assert_eq!(a.variance_radii(), &[1.0, 2.0, 4.0]);
    // the normalized form loads to the same config and hash
    let normalized = serde_json::to_string(&a).unwrap();
    let b = parse_and_validate(&normalized, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.hash(), b.hash());
}

#[test]
fn tightness_run_reports_only_its_contract() {
    let cfg = parse_and_validate(&regime(r#"{"variant": "riesz_kernel", "beta": 0.5}"#, 1.5, 1), Some(Kind::Tightness)).unwrap();
    let root = tempfile::tempdir().unwrap();
    let out = run_in(&cfg, root.path()).unwrap();
    assert_eq!(out.verdict.contracts.len(), 1);
    assert_eq!(out.verdict.contracts[0].criterion, 8);
    assert!(out.manifest.complete);
    assert!(out.manifest.files.iter().any(|f| f.path == "tightness/kernel.csv"));
    assert!(out.manifest.files.iter().any(|f| f.path == "verdict.json"));
    assert!(out.dir.join("MANIFEST.json").exists());
    assert!(out.dir.file_name().unwrap().to_string_lossy().starts_with(&cfg.hash()[..16]));
}

#[test]
fn binary_rejects_invalid_config_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, regime(r#"{"variant": "white_noise"}"#, 1.5, 2)).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fracshe"))
        .args(["clt", path.to_str().unwrap()])
        .env("FRACSHE_OUTPUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("case (ii) requires d = 1"));
}
