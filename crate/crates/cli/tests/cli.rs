use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    workspace().join("configs").join(name)
}

fn bzb(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bzb"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("BZB_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn validate(report: &Value) {
    let schema: Value =
        serde_json::from_str(include_str!("../schema/verification_report.schema.json")).expect("schema parses");
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let msgs: Vec<String> = match compiled.validate(report) {
        Ok(()) => return,
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    panic!("report does not match the schema:\n{}", msgs.join("\n"));
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn verify_certifies_vehicle() {
    let dir = tempfile::tempdir().unwrap();
    let out = bzb(dir.path(), &["verify", path_arg(&config("vehicle.toml"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("report.json"));
    validate(&report);
    assert_eq!(report["verdict"]["certified"], Value::Bool(true));
    assert_eq!(report["verdict"]["summary"], "strict strong-local minimizer certified");
    assert_eq!(report["config"]["parameters"]["X"], 1.0);
    assert_eq!(report["second_variation"]["dimension"], 0);
}

#[test]
fn verify_reports_rs_failure_at_the_limit() {
    let dir = tempfile::tempdir().unwrap();
    let out = bzb(dir.path(), &["verify", path_arg(&config("vehicle_tlim.toml"))]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("report.json"));
    validate(&report);
    let failing: Vec<&str> = report["verdict"]["failing"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(failing.contains(&"RS"), "{failing:?}");
}

#[test]
fn crossing_problem_report_matches_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = bzb(dir.path(), &["verify", path_arg(&config("drag.toml"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("report.json"));
    validate(&report);
    assert_eq!(report["zero_structure"]["s3"].as_array().unwrap().len(), 1);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    fs::write(&missing, "problem = \"vehicle\"\n[parameters]\nalpha = 1.0\nX = 1.0\n[schedule]\nT = 2.3\ntau1 = 1.3\ntau2 = 1.9\n")
        .unwrap();
    let out = bzb(dir.path(), &["verify", path_arg(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda0"));

    let broken = dir.path().join("broken.toml");
    fs::write(&broken, "problem = \"vehicle\"\n[schedule]\nT = = 2.3\n").unwrap();
    let out = bzb(dir.path(), &["verify", path_arg(&broken)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = bzb(dir.path(), &["verify", path_arg(&dir.path().join("absent.toml"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn computation_errors_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("late.toml");
    fs::write(&cfg, "problem = \"vehicle\"\n[parameters]\nalpha = 1.0\nX = 1.0\n[schedule]\nT = 2.6\noracle = true\n").unwrap();
    let out = bzb(dir.path(), &["verify", path_arg(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage schedule") && err.contains("branch inapplicable"), "{err}");
}

fn sweep_table(dir: &Path, from: &str, to: &str, count: &str) -> Vec<Vec<String>> {
    let out = bzb(dir, &["sweep", path_arg(&config("vehicle.toml")), "--param", "T", "--from", from, "--to", to, "--count", count]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.join("sweep_T.csv")).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn sweep_rs_margin_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep_table(dir.path(), "2.2", "2.4", "21");
    assert_eq!(rows[0], ["T", "NT", "SS", "PMP-boundary", "RA", "RS", "SecondVar", "Clarke", "verdict"]);
    assert_eq!(rows.len(), 22);
    let rs: Vec<f64> = rows[1..].iter().map(|r| r[5].parse().unwrap()).collect();
    assert!(rs.windows(2).all(|w| w[1] < w[0]), "{rs:?}");
    assert!(rows[1..].iter().all(|r| r[8] == "certified"));
}

#[test]
fn sweep_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep_table(dir.path(), "2.2", "2.4", "0");
    assert_eq!(rows.len(), 1);
    let rows = sweep_table(dir.path(), "2.35", "2.45", "5");
    let verdicts: Vec<&str> = rows[1..].iter().map(|r| r[8].as_str()).collect();
    assert_eq!(verdicts, ["certified", "certified", "certified", "branch-inapplicable", "branch-inapplicable"]);
    let out = bzb(dir.path(), &["sweep", path_arg(&config("vehicle.toml")), "--param", "gamma", "--from", "0", "--to", "1", "--count", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trace_files_are_consistent_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = bzb(dir.path(), &["trace", path_arg(&config("vehicle.toml"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let extremal = fs::read_to_string(dir.path().join("extremal.csv")).unwrap();
    assert_eq!(extremal.lines().next().unwrap(), "t,x1,x2,p1,p2,tag");

    let (tau1, tau2) = (1.323442663712861, 1.976557336287139);
    let switching = fs::read_to_string(dir.path().join("switching.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        switching.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let at = |t: f64, col: usize| {
        let r = rows.iter().find(|r| (r[0] - t).abs() < 1e-12).expect("switch time sampled");
        r[col]
    };
    assert!(at(tau1, 2).abs() < 1e-8);
    assert!(at(tau2, 4).abs() < 1e-8);
    // the traces keep their sign strictly inside the arcs
    for r in &rows {
        match r[1] as usize {
            1 if r[0] < tau1 - 1e-6 => assert!(r[2] > 0.0),
            3 if r[0] > tau2 + 1e-6 => assert!(r[4] > 0.0),
            _ => {}
        }
    }
    let clarke = fs::read_to_string(dir.path().join("clarke.csv")).unwrap();
    assert_eq!(clarke.lines().next().unwrap(), "switch,a,sigma_min");
    assert_eq!(clarke.lines().count(), 1 + 2 * 201);

    let again = tempfile::tempdir().unwrap();
    bzb(again.path(), &["trace", path_arg(&config("vehicle.toml"))]);
    for f in ["extremal.csv", "switching.csv", "clarke.csv"] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn reports_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    bzb(a.path(), &["verify", path_arg(&config("drag.toml"))]);
    bzb(b.path(), &["verify", path_arg(&config("drag.toml"))]);
    assert_eq!(fs::read(a.path().join("report.json")).unwrap(), fs::read(b.path().join("report.json")).unwrap());
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_bzb"))
        .args(["verify", path_arg(&config("vehicle_explicit.toml"))])
        .env("BZB_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(dir.path().join("vehicle_report.json").exists());
}

#[test]
fn bench_writes_report_and_cost_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = bzb(dir.path(), &["bench", "--alpha", "1", "--X", "1", "--T", "2.3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let bench = read_json(&dir.path().join("bench_report.json"));
    validate(&bench["report"]);
    assert!(bench["probe"]["quadratic_coefficient"].as_f64().unwrap() > 0.0);
    let table = fs::read_to_string(dir.path().join("probe.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 81);
    let out = bzb(dir.path(), &["bench", "--T", "2.0"]);
    assert_eq!(out.status.code(), Some(2));
}
