//! End-to-end checks of config validation, artifact formats, and run
//! determinism through the compiled binary.

use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fieldflow")
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_ZERO: &str = r#"{
  "geometry": {"d": 2, "side": 2.0, "eps": 1.0},
  "mass": 1.0,
  "model": {"kind": "zero"},
  "numerics": {"n_inner": 64, "t_nodes": 24, "n_samples": 500, "probes": 6, "burnin": 100},
  "seed": 3
}"#;

#[test]
fn minimal_config_loads_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "minimal.json",
        r#"{
          "geometry": {"d": 2, "side": 1.0, "eps": 0.25},
          "mass": 1.0,
          "model": {"kind": "sine-gordon", "z": 0.05, "beta": 4.0}
        }"#,
    );
    // Bad subcommand inputs still validate the config; use profile with tiny
    // sizes via overrides is not possible, so just check validation by
    // running a command that fails fast on a missing output dir.
    let out = Command::new(bin())
        .args(["profile", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    // No output_dir and no --out: hard error, but not a parse error.
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no output directory"), "{stderr}");
}

#[test]
fn beta_regime_warning_is_emitted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "hot.json",
        r#"{
          "geometry": {"d": 2, "side": 2.0, "eps": 1.0},
          "mass": 1.0,
          "model": {"kind": "sine-gordon", "z": 0.01, "beta": 20.0},
          "numerics": {"n_inner": 32, "t_nodes": 16, "n_samples": 200, "probes": 4, "burnin": 50},
          "seed": 1
        }"#,
    );
    let out_dir = dir.path().join("out");
    let out = Command::new(bin())
        .args(["profile", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("6π"), "missing regime warning: {stderr}");
    let manifest = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("6π"));
}

#[test]
fn non_integral_spacing_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{
          "geometry": {"d": 2, "side": 1.0, "eps": 0.3},
          "mass": 1.0,
          "model": {"kind": "zero"}
        }"#,
    );
    let out = Command::new(bin())
        .args(["profile", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("geometry.eps"), "{stderr}");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "unknown.json",
        r#"{
          "geometry": {"d": 2, "side": 1.0, "eps": 0.5},
          "mass": 1.0,
          "model": {"kind": "zero"},
          "mystery_knob": 7
        }"#,
    );
    let out = Command::new(bin())
        .args(["profile", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mystery_knob"), "{stderr}");
}

#[test]
fn zero_potential_profile_is_identically_zero_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "zero.json", SMALL_ZERO);
    let run = |out_name: &str, threads: &str| {
        let out_dir = dir.path().join(out_name);
        let out = Command::new(bin())
            .args(["profile", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .args(["--threads", threads])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{:?}", out);
        std::fs::read(out_dir.join("profile.json")).unwrap()
    };
    let a = run("out-a", "1");
    let b = run("out-b", "2");
    assert_eq!(a, b, "reports differ across thread counts");
    let text = String::from_utf8(a).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    for v in doc["lambda_dot"].as_array().unwrap() {
        assert_eq!(v.as_f64().unwrap(), 0.0);
    }
    assert_eq!(doc["lipschitz_bound"].as_f64().unwrap(), 1.0);
}

#[test]
fn transport_ensemble_round_trips_through_the_file_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "zero.json", SMALL_ZERO);
    let out_dir = dir.path().join("out");
    let out = Command::new(bin())
        .args(["transport", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{:?}", out);
    let ens = fieldflow::ensemble::read_ensemble(&out_dir.join("transport.ens")).unwrap();
    assert_eq!(ens.count(), 500);
    assert_eq!(ens.measure, fieldflow::ensemble::MeasureTag::TransportNu);
    // Identity map: the transported ensemble is exactly the free-field one.
    let gamma = fieldflow::ensemble::FieldEnsemble::gff(
        ens.geometry(),
        fieldflow::MassParams::new(1.0).unwrap(),
        500,
        3,
    )
    .unwrap();
    for (a, b) in ens.data().iter().zip(gamma.data()) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn seed_override_is_recorded_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "zero.json", SMALL_ZERO);
    let out_dir = dir.path().join("out");
    let out = Command::new(bin())
        .args(["mcmc", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .args(["--seed", "99"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{:?}", out);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"].as_u64(), Some(99));
    let overrides = manifest["cli_overrides"].as_array().unwrap();
    assert!(overrides.iter().any(|o| o.as_str().unwrap().contains("seed")));
    // Manifest names every artifact with a hash.
    for artifact in manifest["artifacts"].as_array().unwrap() {
        assert_eq!(artifact["sha256"].as_str().unwrap().len(), 64);
    }
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}
