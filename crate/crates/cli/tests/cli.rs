use pilotwave_cli::output::{read_csv, read_field, read_json, read_manifest, read_trajectories};
use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

fn pilotwave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pilotwave"))
        .args(args)
        .env_remove("PILOTWAVE_THREADS")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let o = pilotwave(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn stderr_json(o: &Output) -> serde_json::Value {
    let line = String::from_utf8_lossy(&o.stderr);
    let last = line.lines().last().expect("an error line");
    serde_json::from_str(last).expect("one-line JSON error")
}

const SMALL: [(&str, &[&str]); 7] = [
    ("pair-decay", &["--n", "4", "--t-final", "2"]),
    ("imaging", &["--n", "3"]),
    ("arrival-time", &["--snapshots", "41", "--t-final", "4"]),
    ("dirac-demo", &["--n", "3", "--t-final", "1"]),
    (
        "dkp-energyflow",
        &["--n", "3", "--t-final", "1", "--demo-points", "50"],
    ),
    ("energy-shell", &["--points", "101"]),
    ("field-modes", &["--n", "50", "--t-final", "1"]),
];

fn run_small(name: &str, extra: &[&str], dir: &Path, seed: &str) {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", name, "--seed", seed, "--out", out];
    args.extend_from_slice(extra);
    run_ok(&args);
}

/// Parse every file listed in the manifest with the matching schema parser.
fn check_round_trip(dir: &Path) {
    let m = read_manifest(&dir.join("manifest.json")).unwrap();
    for f in &m.files {
        let p = dir.join(&f.path);
        match f.kind.as_str() {
            "trajectories" => {
                let rows = read_trajectories(&p).unwrap();
                assert!(!rows.is_empty(), "{}", f.path);
            }
            "field-sidecar" => {
                let (side, data) = read_field(&p).unwrap();
                assert_eq!(data.len(), side.shape.iter().product::<usize>());
            }
            "field-data" => assert!(p.exists()),
            "curve" => assert!(!read_csv(&p).unwrap().rows.is_empty()),
            "stats" | "manifest" => {
                read_json(&p).unwrap();
            }
            other => panic!("unknown kind {other}"),
        }
    }
}

#[test]
fn identical_seed_gives_identical_files() {
    for (name, extra) in SMALL {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_small(name, extra, a.path(), "17");
        run_small(name, extra, b.path(), "17");
        let m = read_manifest(&a.path().join("manifest.json")).unwrap();
        for f in m.files.iter().filter(|f| f.path != "manifest.json") {
            let x = std::fs::read(a.path().join(&f.path)).unwrap();
            let y = std::fs::read(b.path().join(&f.path)).unwrap();
            assert!(x == y, "{name}: {} differs between identical runs", f.path);
        }
        check_round_trip(a.path());
    }
}

#[test]
fn manifest_records_run() {
    let d = tempfile::tempdir().unwrap();
    run_small("energy-shell", &["--points", "11"], d.path(), "3");
    let m = read_manifest(&d.path().join("manifest.json")).unwrap();
    assert_eq!(m.experiment, "energy-shell");
    assert_eq!(m.seed, 3);
    assert_eq!(m.rng, "ChaCha8");
    assert_eq!(m.config["parameters"]["points"], 11);
    assert!(m.versions.contains_key("pilotwave-core"));
    assert!(m.wall_time_s >= 0.0 && !m.timestamp.is_empty());
}

#[test]
fn pair_decay_example() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    run_ok(&[
        "run",
        "pair-decay",
        "--alpha",
        "1",
        "--n",
        "100",
        "--t-final",
        "10",
        "--out",
        out,
    ]);
    let rows = read_trajectories(&d.path().join("trajectories.csv")).unwrap();
    let runs: BTreeSet<u64> = rows.iter().map(|r| r.run_id).collect();
    let particles: BTreeSet<u32> = rows.iter().map(|r| r.particle).collect();
    assert_eq!(runs.len(), 100);
    assert_eq!(particles, BTreeSet::from([1, 2]));
    assert!(rows.iter().any(|r| r.t == 10.0));
    let m = read_manifest(&d.path().join("manifest.json")).unwrap();
    assert!(m.summary["max_centre_of_mass_drift"].as_f64().unwrap() < 1e-8);
}

#[test]
fn energy_shell_header_matches_formula() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    run_ok(&[
        "run",
        "energy-shell",
        "--eplus-frac",
        "0.02",
        "--gap",
        "0.001",
        "--out",
        out,
    ]);
    let f = read_csv(&d.path().join("shell_curve.csv")).unwrap();
    // a lambda_c = 4 pi^2 sqrt(E / m c^2) for equal masses
    let k = 4.0 * std::f64::consts::PI.powi(2);
    assert_eq!(f.header["a_plus"], format!("{:.5}", k * 0.02f64.sqrt()));
    assert_eq!(f.header["a_plus"], "5.58309");
    assert_eq!(
        f.header["a_minus"],
        format!("{:.5}", k * (0.02f64 * 0.999).sqrt())
    );
    assert_eq!(f.header["a_units"], "1/lambda_c");
    assert_eq!(f.columns, ["x", "g", "g_squared"]);
}

#[test]
fn empty_invocation_prints_usage() {
    let o = pilotwave(&["run"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("Usage: pilotwave run"));
    assert_eq!(stderr_json(&o)["error"], "config");
}

#[test]
fn empty_config_file_rejected() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("empty.toml");
    std::fs::write(&p, "").unwrap();
    let o = pilotwave(&["run", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "config");
}

#[test]
fn config_file_with_flag_override() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("shell.toml");
    let out = d.path().join("out");
    std::fs::write(
        &p,
        format!(
            "experiment = \"energy-shell\"\nseed = 4\noutput_dir = {:?}\n\n[parameters]\npoints = 21\nx_max = 2.0\n",
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    run_ok(&["run", "--config", p.to_str().unwrap(), "--points", "31"]);
    let f = read_csv(&out.join("shell_curve.csv")).unwrap();
    assert_eq!(f.rows.len(), 31);
    assert_eq!(f.rows.last().unwrap()[0], "2");
}

#[test]
fn lens_validation_derives_image_distance() {
    let o = run_ok(&["validate", "imaging", "--focal", "1.5", "--object", "3"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["valid"], true);
    assert!((v["derived"]["image"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert!(
        v["derived"]["lens_equation_residual"]
            .as_f64()
            .unwrap()
            .abs()
            < 1e-12
    );
}

#[test]
fn inconsistent_lens_rejected() {
    let o = pilotwave(&[
        "validate", "imaging", "--focal", "1", "--object", "2", "--image", "3",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn non_positive_alpha_names_field() {
    let o = pilotwave(&["validate", "pair-decay", "--alpha", "0", "--dt", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let fields: Vec<&str> = v["issues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["field"].as_str().unwrap())
        .collect();
    assert_eq!(fields, ["alpha", "dt"]);
    let r = pilotwave(&[
        "run",
        "pair-decay",
        "--alpha",
        "-1",
        "--out",
        "/nonexistent/never",
    ]);
    assert_eq!(stderr_json(&r)["field"], "alpha");
}

#[test]
fn off_shell_dkp_wave_is_physics_error() {
    let waves = r#"[{type = "scalar", coefficient = [1, 0], p = [0.5, 0, 0]}, {type = "scalar", coefficient = [1, 0], p = [1, 0, 0], energy = 1.0}]"#;
    let o = pilotwave(&["validate", "dkp-energyflow", "--waves", waves]);
    assert_eq!(o.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["issues"][0]["field"], "waves[1]");
    assert_eq!(v["issues"][0]["category"], "physics");
}

#[test]
fn unknown_parameter_rejected() {
    let o = pilotwave(&["run", "energy-shell", "--gapp", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["message"]
        .as_str()
        .unwrap()
        .contains("gapp"));
}

#[test]
fn unknown_experiment_rejected() {
    let o = pilotwave(&["validate", "teleport"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_thread_count_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_pilotwave"))
        .args(["list"])
        .env("PILOTWAVE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_cap_does_not_change_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_small("pair-decay", &["--n", "6", "--t-final", "1"], a.path(), "2");
    let o = Command::new(env!("CARGO_BIN_EXE_pilotwave"))
        .args([
            "run",
            "pair-decay",
            "--seed",
            "2",
            "--out",
            b.path().to_str().unwrap(),
            "--n",
            "6",
            "--t-final",
            "1",
        ])
        .env("PILOTWAVE_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    let m = read_manifest(&b.path().join("manifest.json")).unwrap();
    assert_eq!(m.threads, 1);
    for f in ["trajectories.csv", "stats.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
}

#[test]
fn list_names_every_experiment() {
    let o = run_ok(&["list"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for name in [
        "pair-decay",
        "imaging",
        "equivariance",
        "arrival-time",
        "measurement",
        "dirac-demo",
        "dkp-energyflow",
        "energy-shell",
        "field-modes",
    ] {
        assert!(text.contains(name));
    }
}
