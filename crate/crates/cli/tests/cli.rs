use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn potwell(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_potwell")).current_dir(dir).args(args).output().expect("binary runs")
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn lp_on_bryant_degree_two_is_infeasible_with_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let flow = data("bryant.flow");
    let out = potwell(dir.path(), &["lp", "--flow", flow.to_str().unwrap(), "--degree", "2", "--out", "cert.json"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json_file(&dir.path().join("cert.json"));
    assert_eq!(cert["verdict"], "infeasible-at-degree");
    let farkas = &cert["farkas"];
    assert_eq!(farkas["verified"], true);
    assert_eq!(farkas["recomputed"]["identity_residual"], "0");
    let y = farkas["grid"][0]["y"].as_str().unwrap();
    assert!(y.contains('/') || y.parse::<i64>().is_ok());

    let manifest = json_file(&dir.path().join("cert.json.manifest.json"));
    assert_eq!(manifest["subcommand"], "lp");
    assert_eq!(manifest["exit_code"], 3);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 1);
}

#[test]
fn lp_on_rotation_is_feasible() {
    let dir = tempfile::tempdir().unwrap();
    let flow = data("rotation.flow");
    let out = potwell(dir.path(), &["lp", "--flow", flow.to_str().unwrap(), "--degree", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let cert: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cert["witness"]["adaptation"]["classification"], "strong");
    assert!(dir.path().join("potwell-manifest.json").exists());
}

#[test]
fn orbit_of_writer_enters_u_at_step_one() {
    let dir = tempfile::tempdir().unwrap();
    let machine = data("writer.tm");
    let out = potwell(dir.path(), &["tm", "orbit", "--machine", machine.to_str().unwrap(), "--window", "1", "--out", "orbit.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["verdict"], "entered-U");
    assert_eq!(summary["entry_step"], 1);
    let csv = std::fs::read_to_string(dir.path().join("orbit.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "step,state,z1,z2,u,v,distance_to_u,conjugate,shadow_error");
    assert!(rows[2].starts_with("1,HALT,") && rows[2].contains(",1/10,0,true,"));
}

#[test]
fn budget_exhaustion_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let machine = data("self_loop.tm");
    for sub in ["run", "orbit", "suspend"] {
        let out = potwell(dir.path(), &["tm", sub, "--machine", machine.to_str().unwrap(), "--steps", "40"]);
        assert_eq!(out.status.code(), Some(4), "tm {sub}");
    }
}

#[test]
fn harmonic_well_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let spec = data("harmonic.pot");
    let args = ["simulate", "well", "--spec", spec.to_str().unwrap(), "--x0", "1", "--p0", "0.5", "--T", "5", "--dt", "1e-3"];
    let out = potwell(dir.path(), &[&args[..], &["--out", "well.csv"]].concat());
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("well.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,q1,p1,H"));
    let mut rows = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let (t, q, p) = (v[0], v[1], v[2]);
        assert!((q - (t.cos() + 0.5 * t.sin())).abs() < 1e-6, "q at t={t}");
        assert!((p - (0.5 * t.cos() - t.sin())).abs() < 1e-6, "p at t={t}");
        rows += 1;
    }
    assert_eq!(rows, 5001);
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let flow = data("bryant.flow");
    let out = potwell(dir.path(), &["simulate", "flow", "--spec", flow.to_str().unwrap(), "--x0", "0.25,0", "--T", "5", "--out", "traj.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let last = std::fs::read_to_string(dir.path().join("traj.csv")).unwrap().lines().last().unwrap().to_string();
    let x: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!((x - 0.5).abs() < 1e-6);

    let out = potwell(dir.path(), &["replay", "traj.csv.manifest.json", "--manifest", "replay.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["reproduced"], true);

    let path = dir.path().join("traj.csv.manifest.json");
    let mut m = json_file(&path);
    assert_eq!(m["outputs"][0]["path"], "traj.csv");
    m["outputs"][0]["sha256"] = Value::from("0".repeat(64));
    std::fs::write(&path, m.to_string()).unwrap();
    let out = potwell(dir.path(), &["replay", "traj.csv.manifest.json", "--manifest", "replay.json"]);
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["mismatched_outputs"][0], "traj.csv");
}

#[test]
fn malformed_spec_reports_the_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.flow"), "{\"dim\": 2,\n \"components\": [[[[1], 1, 0]], []]}").unwrap();
    let out = potwell(dir.path(), &["check-adapted", "--flow", "bad.flow", "--form", data("dx.form").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("components[0][0]"), "{err}");

    std::fs::write(dir.path().join("bad.tm"), "{\"states\": [\"A\", \"HALT\"],\n \"start\": \"A\", \"halt\": \"HALT\", \"k\": 1,\n \"delta\": [[\"A\", 0, \"HALT\", 1, 0]]}").unwrap();
    let out = potwell(dir.path(), &["tm", "run", "--machine", "bad.tm"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing entry for (A, 1)"), "{err}");

    let out = potwell(dir.path(), &["lp", "--flow", "bad.flow"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn adapted_forms_round_trip_through_average_and_check() {
    let dir = tempfile::tempdir().unwrap();
    let (flow, form) = (data("circle.flow"), data("wobble.form"));
    let out = potwell(dir.path(), &["average", "--flow", flow.to_str().unwrap(), "--form", form.to_str().unwrap(), "--out", "avg.form"]);
    assert_eq!(out.status.code(), Some(0));
    let avg = json_file(&dir.path().join("avg.form"));
    assert_eq!(avg["kind"], "form");
    let c = &avg["components"][0];
    assert_eq!(c.as_array().unwrap().len(), 1);
    assert!((c[0][1].as_f64().unwrap() - 1.0).abs() < 1e-8);

    let out = potwell(dir.path(), &["check-adapted", "--flow", flow.to_str().unwrap(), "--form", "avg.form"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["classification"], "strong");
}

#[test]
fn lift_keeps_zero_section() {
    let dir = tempfile::tempdir().unwrap();
    let flow = data("product.flow");
    let out = potwell(dir.path(), &["lift", "--flow", flow.to_str().unwrap(), "--x0", "0.1,0.2,0.3;0.4,0.5,0.6"]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["zero_section_invariant"], true);
    assert_eq!(report["points"].as_array().unwrap().len(), 2);
}

#[test]
fn embed_circle_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (flow, form) = (data("circle.flow"), data("dt.form"));
    let out = potwell(dir.path(), &["embed", "--flow", flow.to_str().unwrap(), "--form", form.to_str().unwrap(), "--T", "2", "--out-dir", "e"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metric.json", "embedding.json", "potential.json", "samples.csv", "report.json", "manifest.json"] {
        assert!(dir.path().join("e").join(f).exists(), "{f}");
    }
    let report = json_file(&dir.path().join("e/report.json"));
    assert_eq!(report["verification"]["pass"], true);
    let pot = json_file(&dir.path().join("e/potential.json"));
    assert_eq!(pot["kind"], "extended");

    let spec = dir.path().join("e/potential.json");
    let out = potwell(dir.path(), &["simulate", "well", "--spec", spec.to_str().unwrap(), "--x0", "0.5,0", "--T", "0.1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn nlw_grid_dump_restarts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = data("quartic.pot");
    let spec = spec.to_str().unwrap();
    let out = potwell(dir.path(), &["simulate", "nlw", "--spec", spec, "--x0", "0.3", "--n", "16", "--T", "1", "--out", "a.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let out = potwell(dir.path(), &["simulate", "nlw", "--spec", spec, "--init", "a.csv", "--T", "1", "--out", "b.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let a = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn verify_all_subset_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = potwell(dir.path(), &["verify-all", "--only", "8", "--out", "v.json"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().next().unwrap().starts_with("PASS criterion  8"), "{stdout}");
    let out = potwell(dir.path(), &["verify-all", "--only", "11"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(potwell(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(potwell(dir.path(), &["--help"]).status.code(), Some(0));
}
