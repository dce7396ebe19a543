mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::config_path;
use serde_json::Value;

fn vpcc(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vpcc"));
    cmd.args(args).env_remove(vpcc::cli::SEED_ENV);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn cfg(name: &str) -> String {
    config_path(name).to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn solve_two_bus_at_084_succeeds_and_certifies() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = vpcc(&["solve", &cfg("two_bus.json"), "--method", "proposed", "--out", out_dir.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["feasible"], true);
    assert_eq!(report["feasibility"]["feasible"], true);
    assert_eq!(report["certificate"]["certified"], true);
    assert_eq!(report["inputs"].as_array().unwrap().len(), 1);
    assert!((report["safety"].as_f64().unwrap() - 0.84).abs() < 1e-12);
}

#[test]
fn solve_two_bus_at_099_reports_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let out = vpcc(
        &["solve", &cfg("two_bus.json"), "--alpha", "0.01", "--out", dir.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["status"], "Infeasible");
    assert_eq!(report["u"], Value::Null);
}

#[test]
fn scenario_report_carries_the_sample_count_note() {
    let dir = tempfile::tempdir().unwrap();
    let out = vpcc(
        &["solve", &cfg("two_bus.json"), "--method", "scenario", "--alpha", "0.01", "--out", dir.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["scenario"]["samples"], 1782);
    let notes = report["notes"].to_string();
    assert!(notes.contains("1782") && notes.contains("1,781"), "{notes}");
}

#[test]
fn missing_alpha_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut config: Value = serde_json::from_str(&fs::read_to_string(config_path("two_bus.json")).unwrap()).unwrap();
    config.as_object_mut().unwrap().remove("alpha");
    let path = dir.path().join("bad.json");
    fs::write(&path, config.to_string()).unwrap();
    let out = vpcc(&["solve", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("alpha"), "{err}");
}

#[test]
fn unattested_assumptions_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config_path("two_bus.json"))
        .unwrap()
        .replace("\"unimodal\": \"attested\"", "\"unimodal\": \"unknown\"");
    let path = dir.path().join("unattested.json");
    fs::write(&path, text).unwrap();
    let out = vpcc(&["solve", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unimodal"));
    let out = vpcc(&["validate", path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_point_sweep_matches_solve() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sweep = vpcc(
        &["sweep", &cfg("two_bus.json"), "--grid", "0.9", "--methods", "both", "--out", d.to_str().unwrap(), "--jobs", "2"],
        &[],
    );
    assert_eq!(sweep.status.code(), Some(0), "{}", String::from_utf8_lossy(&sweep.stderr));
    let csv = fs::read_to_string(d.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], vpcc::report::SWEEP_HEADER.join(","));
    assert_eq!(lines.len(), 3);
    for (line, method) in lines[1..].iter().zip(["proposed", "scenario"]) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[2], method);
        let solve_dir = d.join(method);
        let out = vpcc(
            &["solve", &cfg("two_bus.json"), "--method", method, "--alpha", "0.1", "--out", solve_dir.to_str().unwrap()],
            &[],
        );
        assert_eq!(out.status.code(), Some(0));
        let report = read_json(&solve_dir.join("report.json"));
        let objective = report["objective"].as_f64().unwrap();
        assert_eq!(fields[5], format!("{objective:.16e}"));
        if method == "proposed" {
            let ci = report["certificate"]["upper_ci_99"].as_f64().unwrap();
            assert_eq!(fields[9], format!("{ci:.16e}"));
        } else {
            assert_eq!(fields[8], report["scenario"]["samples"].to_string());
            assert_eq!(fields[9], "");
        }
    }
}

#[test]
fn sweep_is_deterministic_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for (i, jobs) in ["1", "3"].iter().enumerate() {
        let d = dir.path().join(i.to_string());
        let out = vpcc(
            &["sweep", &cfg("two_bus.json"), "--grid", "0.84:0.88:0.02", "--out", d.to_str().unwrap(), "--jobs", jobs],
            &[],
        );
        assert_eq!(out.status.code(), Some(0));
        let csv = fs::read_to_string(d.join("sweep.csv")).unwrap();
        let stripped: Vec<Vec<String>> = csv
            .lines()
            .map(|l| {
                let mut f: Vec<String> = l.split(',').map(String::from).collect();
                f.remove(7);
                f
            })
            .collect();
        tables.push(stripped);
    }
    assert_eq!(tables[0], tables[1]);
    assert_eq!(tables[0].len(), 1 + 3 * 2);
}

#[test]
fn seed_override_reaches_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = vpcc(
        &["solve", &cfg("two_bus.json"), "--method", "scenario", "--out", dir.path().to_str().unwrap()],
        &[("VPCC_SEED", "5")],
    );
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["scenario"]["seed"], 5);
    assert_eq!(report["config"]["seed"], 5);
    let bad = vpcc(&["validate", &cfg("two_bus.json")], &[("VPCC_SEED", "minus one")]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn moments_command_values() {
    let out = vpcc(&["moments", &cfg("two_bus.json"), "--row", "2", "--time", "1"], &[]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let c_w = 0.813;
    assert!((v["mean_const"].as_f64().unwrap() / c_w - 118.9188).abs() < 1e-3);
    assert!((v["var_const"].as_f64().unwrap() / (c_w * c_w) - 204.6946).abs() < 0.05);

    let out = vpcc(&["moments", &cfg("deterministic_toy.json"), "--row", "1", "--time", "3", "--u", "1,-1,0.5"], &[]);
    assert_eq!(stdout_json(&out)["variance"].as_f64().unwrap(), 0.0);

    let out = vpcc(&["moments", &cfg("scalar_toy.json"), "--row", "1", "--time", "2", "--u", "1,0"], &[]);
    let v = stdout_json(&out);
    assert_eq!(v["mean"].as_f64().unwrap(), 2.0);
    assert_eq!(v["variance"].as_f64().unwrap(), 6.0);

    let out = vpcc(&["moments", &cfg("scalar_toy.json"), "--row", "3", "--time", "1"], &[]);
    assert_eq!(out.status.code(), Some(1));
    let out = vpcc(&["moments", &cfg("scalar_toy.json"), "--row", "1", "--time", "9"], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_checks_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = vpcc(&["solve", &cfg("two_bus.json"), "--alpha", "0.1", "--no-certify", "--out", d.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0));
    let path = d.join("report.json");
    let ok = vpcc(&["validate", &cfg("two_bus.json"), "--report", path.to_str().unwrap()], &[]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(stdout_json(&ok)["report"]["verified_feasible"], true);

    // Lowering both generators breaks the demand row.
    let mut report = read_json(&path);
    report["u"] = serde_json::json!([100.0, 100.0]);
    let tampered = d.join("tampered.json");
    fs::write(&tampered, report.to_string()).unwrap();
    let bad = vpcc(&["validate", &cfg("two_bus.json"), "--report", tampered.to_str().unwrap()], &[]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(vpcc(&["--help"], &[]).status.code(), Some(0));
    assert_eq!(vpcc(&["solve"], &[]).status.code(), Some(1));
    assert_eq!(vpcc(&["sweep", &cfg("two_bus.json"), "--out", "/tmp/x", "--grid", "0.9:0.8:0.1"], &[]).status.code(), Some(1));
}
