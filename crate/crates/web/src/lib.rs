//! wasm-bindgen bindings behind the browser demo in `www/`.
//!
//! Each export takes plain numbers and strings and returns a JSON string.

use qcb_core::domains;
use qcb_core::measures::{estimate_pairings, TestDictionary};
use qcb_core::relaxation::{self, RelaxationResult, SolverOptions};
use qcb_core::sequences::{k_ladder, SequenceSpec};
use qcb_core::{Integrand, Matrix};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn parse_integrand(spec: &str) -> Result<Integrand, String> {
    let value = serde_json::from_str(spec).unwrap_or_else(|_| Value::String(spec.trim().to_string()));
    Integrand::from_json(&value).map_err(|e| e.to_string())
}

fn parse_reals(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", t.trim())))
        .collect()
}

fn options(multistart: usize, seed: u64) -> SolverOptions {
    SolverOptions {
        multistart: multistart.max(1),
        max_iter: 300,
        seed,
        ..SolverOptions::default()
    }
}

fn summary(r: &RelaxationResult) -> Value {
    json!({
        "value": r.value,
        "classification": r.classification,
        "converged": r.converged,
        "eps_cls": r.eps_cls,
        "trace": r.trace,
        "witness_energy": r.evidence.as_ref().map(|e| e.energy),
        "scaling_ok": r.evidence.as_ref().map(|e| e.scaling_ok),
        "runs": r.runs.iter().map(|run| run.energy).collect::<Vec<_>>(),
    })
}

/// Qv(s0) on the unit ball with s0 given as comma-separated row-major entries.
pub fn envelope_json(integrand: &str, s0: &str, h: f64, multistart: usize, seed: u64) -> Result<Value, String> {
    let v = parse_integrand(integrand)?;
    let entries = parse_reals(s0)?;
    let s0 = if entries.is_empty() {
        v.zero_matrix()
    } else {
        Matrix::from_row_major(v.m(), v.n(), &entries).ok_or_else(|| format!("s0 needs {} entries", v.m() * v.n()))?
    };
    let mesh = domains::build_ball(v.n(), h).map_err(|e| e.to_string())?;
    let r = relaxation::quasiconvex_envelope(&v, &s0, &mesh, &options(multistart, seed)).map_err(|e| e.to_string())?;
    let mut out = summary(&r);
    out["v_at_s0"] = json!(v.eval(&s0));
    out["cells"] = json!(mesh.cell_count());
    Ok(out)
}

/// Q_{b,ρ}v(0) on the half ball with outer normal ρ.
pub fn boundary_json(integrand: &str, rho: &str, h: f64, multistart: usize, seed: u64) -> Result<Value, String> {
    let v = parse_integrand(integrand)?;
    let rho = parse_reals(rho)?;
    let mesh = domains::build_half_ball(&rho, h).map_err(|e| e.to_string())?;
    let r = relaxation::boundary_quasiconvexification(&v, &rho, &mesh, &options(multistart, seed)).map_err(|e| e.to_string())?;
    let mut out = summary(&r);
    out["cells"] = json!(mesh.cell_count());
    Ok(out)
}

/// Pairings ∫|∇u_k|² and ∫det ∇u_k for the laminate between a e1⊗e2 and 0.
pub fn laminate_json(a: f64, lambda: f64, kmax: u64, h: f64) -> Result<Value, String> {
    let s = Matrix::outer(&[a, 0.0], &[0.0, 1.0]);
    let seq = SequenceSpec::Laminate {
        a: s,
        b: Matrix::zeros(2, 2),
        lambda,
        direction: vec![0.0, 1.0],
        base: None,
    };
    let mesh = domains::build_ball(2, h).map_err(|e| e.to_string())?;
    let tests = vec![
        Integrand::power_norm(2, 2, 2.0, 1.0).map_err(|e| e.to_string())?,
        Integrand::determinant(2).map_err(|e| e.to_string())?,
    ];
    let dict = TestDictionary::new(2, 2, 2.0, vec![], tests).map_err(|e| e.to_string())?;
    let ladder = seq.resolvable_ladder(&mesh, 1, kmax);
    if ladder.is_empty() {
        return Err(format!("no k in {:?} is resolved at h = {h}", k_ladder(1, kmax)));
    }
    let est = estimate_pairings(&seq, &mesh, &dict, &ladder).map_err(|e| e.to_string())?;
    let u = dict.user_start();
    let vol = mesh.total_volume();
    let row = |v: usize| {
        let p = est.pairing(0, v).expect("pairing exists");
        json!({ "values": p.values, "limit": p.limit.limit })
    };
    Ok(json!({
        "k": ladder,
        "energy": row(u),
        "det": row(u + 1),
        "energy_expected": lambda * a * a * vol,
        "weak_limit_energy": lambda * lambda * a * a * vol,
        "volume": vol,
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn envelope(integrand: &str, s0: &str, h: f64, multistart: u32, seed: u32) -> Result<String, JsError> {
    to_js(envelope_json(integrand, s0, h, multistart as usize, seed.into()))
}

#[wasm_bindgen]
pub fn boundary(integrand: &str, rho: &str, h: f64, multistart: u32, seed: u32) -> Result<String, JsError> {
    to_js(boundary_json(integrand, rho, h, multistart as usize, seed.into()))
}

#[wasm_bindgen]
pub fn laminate(a: f64, lambda: f64, kmax: u32, h: f64) -> Result<String, JsError> {
    to_js(laminate_json(a, lambda, kmax.into(), h))
}
