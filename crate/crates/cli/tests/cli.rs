use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn tva(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tva")).args(args).output().expect("spawn tva")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_json_reproduces_the_fixture_golden() {
    let out = tempfile::tempdir().unwrap();
    let o = tva(&[
        "run",
        "--config",
        path(&fixtures().join("shots.json")),
        "--data",
        path(&fixtures().join("immunization.csv")),
        "--out-dir",
        path(out.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got = fs::read_to_string(out.path().join("report.json")).unwrap();
    let want = fs::read_to_string(fixtures().join("goldens/shots.report.json")).unwrap();
    assert!(got == want);
    assert!(String::from_utf8_lossy(&o.stdout).contains("best pool [3:4,1:2,0,1:2]"));
}

#[test]
fn run_csv_writes_three_tables() {
    let out = tempfile::tempdir().unwrap();
    let o = tva(&[
        "run",
        "--config",
        path(&fixtures().join("shots_per_dollar.json")),
        "--data",
        path(&fixtures().join("immunization.csv")),
        "--out-dir",
        path(out.path()),
        "--format",
        "csv",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["support.csv", "estimates.csv", "best_policy.csv"] {
        let text = fs::read_to_string(out.path().join(f)).unwrap();
        assert!(text.lines().count() >= 2, "{f} is empty");
    }
}

#[test]
fn sweep_bootstrap_and_diagnose_produce_output() {
    let out = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("shots.json");
    let data = fixtures().join("immunization.csv");
    let common = ["--config", path(&cfg), "--data", path(&data), "--out-dir", path(out.path())];

    let o = tva(&[&["diagnose"], &common[..], &["--format", "csv"]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let irr = fs::read_to_string(out.path().join("irrepresentability.csv")).unwrap();
    assert!(irr.starts_with("policy,standardized,unstandardized"));

    let o = tva(&[&["bootstrap"], &common[..], &["--replicates", "4", "--seed", "3"]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let b: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path().join("bootstrap.json")).unwrap()).unwrap();
    assert_eq!(b["replicates"], 4);
    assert_eq!(b["seed"], 3);

    let o = tva(&[&["sweep"], &common[..], &["--format", "csv"]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = fs::read_to_string(out.path().join("sweep.csv")).unwrap();
    assert!(sweep.lines().count() > 10);
}

#[test]
fn simulate_is_reproducible_from_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(
        &cfg,
        r#"{"design": [3, 2], "n_grid": [400], "replications": 2, "configurations": 2, "projection": {"draws": 2000, "seed": 1}}"#,
    )
    .unwrap();
    let mut texts = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let o = tva(&["simulate", "--config", path(&cfg), "--seed", "9", "--out-dir", path(&out), "--format", "csv"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        texts.push(fs::read_to_string(out.join("study.csv")).unwrap());
        assert!(out.join("summary.json").exists());
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn validation_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"schema": {"outcome": "y", "arms": []}}"#).unwrap();
    let data = dir.path().join("d.csv");
    fs::write(&data, "a,y\n0,1\n1,2\n").unwrap();
    let o = tva(&["run", "--config", path(&cfg), "--data", path(&data), "--out-dir", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no arms"));

    fs::write(&cfg, r#"{"schema": {"outcome": "y", "arms": [{"column": "a"}]}, "pipeline": {"alpah": 0.1}}"#).unwrap();
    let o = tva(&["run", "--config", path(&cfg), "--data", path(&data), "--out-dir", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_errors_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"schema": {"outcome": "y", "arms": [{"column": "a", "dosages": 2}, {"column": "b", "dosages": 2}]}}"#,
    )
    .unwrap();
    // Cell [1,1] is never assigned, so the full design is singular.
    let mut csv = String::from("a,b,y\n");
    for i in 0..60 {
        let (a, b) = [(0, 0), (1, 0), (0, 1)][i % 3];
        csv.push_str(&format!("{a},{b},{}\n", (i % 7) as f64 * 0.3 + a as f64));
    }
    let data = dir.path().join("d.csv");
    fs::write(&data, csv).unwrap();
    let o = tva(&["run", "--config", path(&cfg), "--data", path(&data), "--out-dir", path(dir.path())]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("precondition"));
}

#[test]
fn diagnose_without_data_reports_the_design_grid() {
    let out = tempfile::tempdir().unwrap();
    let o = tva(&["diagnose", "--levels", "3", "--arms", "1,2", "--n", "2000", "--out-dir", path(out.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("design_diagnostics.json")).unwrap()).unwrap();
    assert_eq!(d["irrepresentability"].as_array().unwrap().len(), 2);
    for row in d["singular_values"].as_array().unwrap() {
        assert!(row["abs_error"].as_f64().unwrap() < 1e-12);
    }
}
