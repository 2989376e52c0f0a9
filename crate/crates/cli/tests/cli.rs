use std::path::Path;
use std::process::{Command, Output};

use qcb_core::domains;
use serde_json::Value;

fn qcb_lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcb-lab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn relax_of_convex_integrand_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = qcb_lab(dir.path(), &["relax", "--integrand", "power-norm", "--s0", "zero", "--mesh", "ball:h=0.2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result = read_json(&dir.path().join("result.json"));
    assert_eq!(result["classification"], "zero");
    assert!(result["value"].as_f64().unwrap().abs() < 1e-12);
    let trace = std::fs::read_to_string(dir.path().join("result.trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,energy\n"));
    let manifest = read_json(&dir.path().join("result.manifest.json"));
    assert_eq!(manifest["command"], "relax");
    assert_eq!(manifest["config"]["multistart"], 16);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn relax_at_nonzero_s0_reports_jensen_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = qcb_lab(
        dir.path(),
        &["relax", "--integrand", "power-norm", "--s0", "[[1,2],[0,-1]]", "--mesh", "ball:h=0.25", "--out", "r.json"],
    );
    assert!(out.status.success());
    let result = read_json(&dir.path().join("r.json"));
    assert_eq!(result["classification"], "finite");
    assert!((result["value"].as_f64().unwrap() - 6.0).abs() < 1e-6);
}

#[test]
fn qcb_of_determinant_replays_witness() {
    let dir = tempfile::tempdir().unwrap();
    let out = qcb_lab(dir.path(), &["qcb", "--integrand", "det2", "--rho", "0,1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let file = read_json(&dir.path().join("qcb.json"));
    assert_eq!(file["classification"], "minus-infinity");
    assert_eq!(file["verdict"]["falsified"], true);

    // recompute the witness energy from its nodal values on a freshly built mesh
    let mesh = domains::build_half_ball(&[0.0, 1.0], 0.2).unwrap();
    let witness: domains::DisplacementField = serde_json::from_value(file["boundary"]["evidence"]["witness"].clone()).unwrap();
    let energy: f64 = domains::cell_gradients(&mesh, &witness)
        .iter()
        .zip(mesh.volumes())
        .map(|(s, v)| v * (s.get(0, 0) * s.get(1, 1) - s.get(0, 1) * s.get(1, 0)))
        .sum::<f64>()
        / mesh.total_volume();
    let recorded = file["boundary"]["evidence"]["energy"].as_f64().unwrap();
    assert!(energy < -1e-3);
    assert!((energy - recorded).abs() <= 1e-10 * recorded.abs());
}

#[test]
fn generate_and_estimate_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let seq = r#"{"kind":"laminate","a":{"rows":2,"cols":2,"data":[0,1,0,0]},"b":{"rows":2,"cols":2,"data":[0,-1,0,0]},"lambda":0.5,"direction":[0,1]}"#;
    std::fs::write(dir.path().join("seq.json"), seq).unwrap();
    std::fs::write(dir.path().join("dict.json"), r#"{"m":2,"n":2,"p":2,"spatial":[],"tests":["det2"]}"#).unwrap();
    let out = qcb_lab(dir.path(), &["generate", "--spec", "seq.json", "--k", "4", "--mesh", "ball:h=0.25"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let field = read_json(&dir.path().join("field.json"));
    assert_eq!(field["k"], 4);
    let out = qcb_lab(
        dir.path(),
        &["estimate", "--spec", "seq.json", "--dict", "dict.json", "--kmin", "64", "--kmax", "256", "--mesh", "ball:h=0.25"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pairings = std::fs::read_to_string(dir.path().join("dpm.pairings.csv")).unwrap();
    assert!(pairings.starts_with("g,v,k,value\n"));
    let manifest = read_json(&dir.path().join("dpm.manifest.json"));
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);

    let out = qcb_lab(dir.path(), &["check", "--dpm", "dpm.json", "--conditions", "characterization"]);
    assert!(out.status.success());
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["passed"], true);
    assert!(report["necessary"].is_null());
}

#[test]
fn repro_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let seq = r#"{"kind":"zero","m":2,"n":2}"#;
    std::fs::write(dir.path().join("seq.json"), seq).unwrap();
    let out = qcb_lab(dir.path(), &["generate", "--spec", "seq.json", "--k", "2", "--mesh", "ball:h=0.5", "--out", "runs/f.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&dir.path().join("runs/f.manifest.json"));
    assert_eq!(manifest["config"]["spec"], "../seq.json");
    assert_eq!(manifest["config"]["out"], "f.json");

    let out = qcb_lab(dir.path(), &["repro", "runs/f.manifest.json"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("identical f.cells.csv"));

    std::fs::write(dir.path().join("seq.json"), r#"{"kind":"zero","m":1,"n":2}"#).unwrap();
    let out = qcb_lab(dir.path(), &["repro", "runs/f.manifest.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(qcb_lab(dir.path(), &["relax", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(qcb_lab(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(qcb_lab(dir.path(), &["relax", "--integrand", "no-such-tag"]).status.code(), Some(2));
    assert_eq!(qcb_lab(dir.path(), &["qcb", "--integrand", "det2", "--rho", "0,2"]).status.code(), Some(2));
    let out = qcb_lab(
        dir.path(),
        &["relax", "--integrand", "quartic-well", "--s0", "0.5", "--mesh", "ball:h=0.05", "--max-iter", "1", "--multistart", "1"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("result.manifest.json").exists());
    let out = Command::new(env!("CARGO_BIN_EXE_qcb-lab"))
        .current_dir(dir.path())
        .env("QCB_LAB_THREADS", "0")
        .args(["relax", "--integrand", "power-norm"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for threads in ["1", "4"] {
        let out = Command::new(env!("CARGO_BIN_EXE_qcb-lab"))
            .current_dir(dir.path())
            .env("QCB_LAB_THREADS", threads)
            .args(["qcb", "--integrand", "power-norm", "--rho", "0,1", "--multistart", "6", "--seed", "7"])
            .output()
            .unwrap();
        assert!(out.status.success());
        let manifest = read_json(&dir.path().join("qcb.manifest.json"));
        assert_eq!(manifest["threads"].as_u64().unwrap().to_string(), threads);
        hashes.push(manifest["outputs"].clone());
    }
    assert_eq!(hashes[0], hashes[1]);
}
