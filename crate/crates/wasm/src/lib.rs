//! Browser bindings. Each export takes plain numbers or strings and returns
//! a JSON document; the logic lives in ordinary functions so it can be
//! tested natively.

use permabound::bethe::{r_o_objective, solve_r_o_mirror, DEFAULT_BETHE_TOL};
use permabound::entropy::{r_e_objective, sinkhorn_solve, DEFAULT_MAX_ITERS, DEFAULT_SINKHORN_TOL};
use permabound::exact::permanent_naive;
use permabound::generate::GenSpec;
use permabound::matrix::{DoublyStochasticMatrix, NonNegMatrix, DEFAULT_CERTIFY_TOL};
use permabound::report::{compute, Relaxation, RunConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_DEMO_N: usize = 8;

/// Full report for a generated instance `kind:n:seed`.
pub fn bounds_json(spec: &str, with_splits: bool) -> Result<String, String> {
    let spec: GenSpec = spec.parse().map_err(|e: permabound::error::Error| e.to_string())?;
    if spec.n > MAX_DEMO_N {
        return Err(format!("the demo is limited to n <= {MAX_DEMO_N}"));
    }
    let m = spec.generate().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    if with_splits {
        cfg.relaxations.extend([Relaxation::Rp, Relaxation::Rq]);
    }
    let report = compute(&m, format!("gen:{spec}"), &cfg).map_err(|e| e.to_string())?;
    Ok(report.to_json())
}

#[derive(Debug, Serialize)]
pub struct Explorer {
    pub per: f64,
    /// `exp(R_E)`, the capacity.
    pub capacity: f64,
    /// `exp(R_O)`, the Bethe permanent.
    pub bethe: f64,
    /// Optimal doubly stochastic matrices, row-major.
    pub entropy_b: Vec<f64>,
    pub bethe_b: Vec<f64>,
}

/// Permanent and both bounds for `[[a, b], [c, d]]`.
pub fn explore_2x2(a: f64, b: f64, c: f64, d: f64) -> Result<Explorer, String> {
    let m = NonNegMatrix::from_row_major(2, vec![a, b, c, d]).map_err(|e| e.to_string())?;
    let per = permanent_naive(&m).map_err(|e| e.to_string())?;
    if per == 0.0 {
        return Ok(Explorer { per, capacity: 0.0, bethe: 0.0, entropy_b: vec![], bethe_b: vec![] });
    }
    let e = sinkhorn_solve(&m, DEFAULT_SINKHORN_TOL, DEFAULT_MAX_ITERS).map_err(|e| e.to_string())?;
    let o = solve_r_o_mirror(&m, DEFAULT_BETHE_TOL, DEFAULT_MAX_ITERS).map_err(|e| e.to_string())?;
    Ok(Explorer {
        per,
        capacity: e.value.exp(),
        bethe: o.value.exp(),
        entropy_b: e.b.entries().to_vec(),
        bethe_b: o.b.entries().to_vec(),
    })
}

#[derive(Debug, Serialize)]
pub struct Curves {
    pub t: Vec<f64>,
    pub entropy: Vec<f64>,
    pub bethe: Vec<f64>,
    pub log_per: f64,
}

/// Both objectives along `B(t) = [[t, 1 - t], [1 - t, t]]` for a positive
/// `2 x 2` matrix, on `samples` evenly spaced points of `[0, 1]`.
pub fn objective_curves(a: f64, b: f64, c: f64, d: f64, samples: usize) -> Result<Curves, String> {
    if !(2..=2001).contains(&samples) {
        return Err("samples must lie in 2..=2001".into());
    }
    let m = NonNegMatrix::from_row_major(2, vec![a, b, c, d]).map_err(|e| e.to_string())?;
    if !m.is_positive() {
        return Err("the curve needs a strictly positive matrix".into());
    }
    let per = permanent_naive(&m).map_err(|e| e.to_string())?;
    let mut curves = Curves { t: vec![], entropy: vec![], bethe: vec![], log_per: per.ln() };
    for k in 0..samples {
        let t = k as f64 / (samples - 1) as f64;
        let point = DoublyStochasticMatrix::certify(2, vec![t, 1.0 - t, 1.0 - t, t], DEFAULT_CERTIFY_TOL)
            .map_err(|e| e.to_string())?;
        curves.t.push(t);
        curves.entropy.push(r_e_objective(&m, &point));
        curves.bethe.push(r_o_objective(&m, &point));
    }
    Ok(curves)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("serializable")).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn bounds(spec: &str, with_splits: bool) -> Result<String, JsValue> {
    bounds_json(spec, with_splits).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn explore(a: f64, b: f64, c: f64, d: f64) -> Result<String, JsValue> {
    to_js(explore_2x2(a, b, c, d))
}

#[wasm_bindgen]
pub fn curves(a: f64, b: f64, c: f64, d: f64, samples: usize) -> Result<String, JsValue> {
    to_js(objective_curves(a, b, c, d, samples))
}
