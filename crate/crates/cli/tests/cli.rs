use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn parametrix(args: &[&str], config: &Path, out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_parametrix"));
    cmd.args(&args[..1]).arg("--config").arg(config).args(&args[1..]);
    if let Some(o) = out {
        cmd.arg("--out").arg(o);
    }
    cmd.output().expect("binary runs")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn constant_heat_kernel_csv_matches_the_heat_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let o = parametrix(&["run"], &scenario("constant_heat.toml"), Some(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("kernel_0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x,xi,value"));
    let mut rows = 0;
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let (t, x, xi, v) = (f[0], f[1], f[2], f[3]);
        let exact = (-(x - xi) * (x - xi) / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt();
        assert!((v - exact).abs() <= 1e-6 * exact + 1e-300, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 4 * 61);
    let s = summary(dir.path());
    assert!(s["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn degenerate_noise_fails_the_coercivity_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = parametrix(&["run"], &scenario("degenerate_coercivity.toml"), Some(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("coercivity_margin"), "{}", stderr(&o));
    let s = summary(dir.path());
    let c = &s["checks"][0];
    assert_eq!(c["name"], "coercivity_margin");
    assert_eq!(c["passed"], false);
}

#[test]
fn unknown_fields_are_schema_errors_with_a_location() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("constant_heat.toml")).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text.replace("[grid]", "[grid]\nresolution = 3")).unwrap();
    let o = parametrix(&["run"], &bad, Some(&dir.path().join("out")));
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("schema error") && e.contains("resolution") && e.contains("line"), "{e}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_values_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("constant_heat.toml")).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text.replace("dim = 1", "dim = 4")).unwrap();
    let o = parametrix(&["validate"], &bad, None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("field.dim"), "{}", stderr(&o));
}

#[test]
fn every_shipped_scenario_validates() {
    for entry in std::fs::read_dir(scenario("")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = parametrix(&["validate"], &path, None);
            assert_eq!(o.status.code(), Some(0), "{}: {}", path.display(), stderr(&o));
        }
    }
}

#[test]
fn empty_scenario_writes_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = parametrix(&["run"], &scenario("empty.toml"), Some(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(dir.path());
    assert_eq!(s["checks"].as_array().unwrap().len(), 0);
    assert_eq!(s["files"].as_array().unwrap().len(), 0);
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let o = parametrix(&["run", "--seed-override", "99"], &scenario("stochastic_heat.toml"), Some(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(dir.path());
    assert_eq!(s["seed"], 99);
    assert!(s["paths"].as_array().unwrap().iter().all(|p| p["seed"] == 99));
}

#[test]
fn hundred_path_run_reports_every_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = parametrix(&["run"], &scenario("stochastic_heat_paths_100.toml"), Some(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(dir.path());
    let paths = s["paths"].as_array().unwrap();
    assert_eq!(paths.len(), 100);
    let counts: u64 = s["histograms"]["mu1"]["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts, 100);
    assert!(s["residual"]["slope"].as_f64().unwrap() >= 0.4);
    assert!(dir.path().join("residual.csv").exists());
    assert!(dir.path().join("kernel_path0_pole0.csv").exists());
}
