use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "domain": {"kind": "interval", "a": -1, "b": 1},
  "horizon": 0.5,
  "dt": 0.01,
  "n_particles": 2000,
  "seed": 3,
  "control": {"variant": "coin_flip", "scale": 1},
  "checkpoints": [0.25, 0.5],
  "bins": {"per_axis": [20]}
}"#;

fn condexit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condexit"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn manifest_files(out: &Path) -> Vec<String> {
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap().to_string())
        .collect()
}

fn listing(out: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_writes_a_complete_inventory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("sim");
    let o = condexit(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--dump-paths",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest_files(&out), listing(&out));
    assert_eq!(
        listing(&out),
        vec![
            "ensemble.json",
            "manifest.json",
            "paths.csv",
            "survival.csv"
        ]
    );
    let paths = fs::read_to_string(out.join("paths.csv")).unwrap();
    assert_eq!(paths.lines().count(), 1 + 3 * 51);
    assert!(paths.starts_with("particle,k,t,x0,alive\n"));
}

#[test]
fn invalid_config_exits_with_one_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"domain":{"kind":"interval","a":-1,"b":1},"horizon":1,"x0":1.5}"#,
    );
    let o = condexit(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("x0"));

    let cfg = write_config(
        dir.path(),
        r#"{"domain":{"kind":"interval","a":-1,"b":1},"horizon":1,"dt":0.3}"#,
    );
    let o = condexit(&[
        "cost",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("T/dt not integral"));

    let o = condexit(&["cost", "--config", "/nonexistent/c.json", "--out", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/c.json"));
}

#[test]
fn projected_field_drives_a_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let proj = dir.path().join("proj");
    let o = condexit(&["project", "--config", &cfg, "--out", proj.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let drift = proj.join("drift.json");
    let cost = dir.path().join("cost");
    let o = condexit(&[
        "cost",
        "--config",
        &cfg,
        "--out",
        cost.to_str().unwrap(),
        "--drift",
        drift.to_str().unwrap(),
        "--seed",
        "11",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cost.join("cost.json")).unwrap()).unwrap();
    let j = report["total"].as_f64().unwrap();
    // projected drift is bounded by 1, so ½|ᾱ|² averages below ½ over a horizon of ½
    assert!(j > 0.0 && j < 0.25, "{j}");
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cost.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"]["ensemble"], 11);
    assert_eq!(m["inputs"]["drift"].as_str().unwrap().len(), 64);
}

#[test]
fn experiment_exit_codes_follow_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &SMALL.replace(
            r#""variant": "coin_flip", "scale": 1"#,
            r#""variant": "constant", "value": [0.2]"#,
        ),
    );
    let out = dir.path().join("value");
    let o = condexit(&[
        "experiment",
        "value",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS jensen_direction"));
    assert_eq!(manifest_files(&out), listing(&out));

    // an absolute W1 tolerance below the same-law spread cannot pass honestly
    let cfg = write_config(
        dir.path(),
        &SMALL.replace(
            r#""seed": 3,"#,
            r#""seed": 3, "tolerances": {"w1_tol": 1e-9},"#,
        ),
    );
    let out = dir.path().join("mim");
    let o = condexit(&[
        "experiment",
        "mimicking",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL calibration_honesty_t0.25"));
    assert_eq!(
        listing(&out),
        vec![
            "costs.csv",
            "manifest.json",
            "marginals_t0.25.csv",
            "marginals_t0.5.csv",
            "report.json",
            "survival.csv",
            "w1.csv"
        ]
    );
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &SMALL.replace(
            r#""variant": "coin_flip", "scale": 1"#,
            r#""variant": "coin_flip", "scale": 3"#,
        ),
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = condexit(&[
            "experiment",
            "truncation",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(
            o.status.code() == Some(0) || o.status.code() == Some(2),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let files = listing(&a);
    assert!(files.contains(&"truncation.csv".to_string()));
    assert_eq!(files, listing(&b));
    for f in files {
        assert_eq!(
            fs::read(a.join(&f)).unwrap(),
            fs::read(b.join(&f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn bridge_flag_changes_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(
        condexit(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()])
            .status
            .success()
    );
    assert!(condexit(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        b.to_str().unwrap(),
        "--no-bridge-correction"
    ])
    .status
    .success());
    let hash = |d: &Path| {
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
        m["config_hash"].as_str().unwrap().to_string()
    };
    assert_ne!(hash(&a), hash(&b));
    let summary = |d: &Path| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(d.join("ensemble.json")).unwrap()).unwrap()
    };
    assert_eq!(summary(&b)["bridge_correction"], false);
    assert!(
        summary(&a)["survival_at_horizon"].as_f64() <= summary(&b)["survival_at_horizon"].as_f64()
    );
}
