//! Browser bindings: a resolvent window profile, the leading eigenpair and a
//! smoothing curve, each returned as a JSON string.
//!
//! The `*_data` functions hold the logic and are usable natively; the
//! `#[wasm_bindgen]` wrappers only serialize and convert errors.

use amplab::cone::ConeTolerance;
use amplab::harness::OperatorSpec;
use amplab::random::{rng, squared_gaussian};
use amplab::resolvent::{scan_window, OffsetLadder, Side, WindowMode};
use amplab::semigroup::{smoothing_fit, SmoothingOptions};
use amplab::{leading_eigenpair, LabError, Result, SolverConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Sides above this are refused so that the page stays responsive.
pub const MAX_SIDE: usize = 4096;

fn build(op: &str, mesh: usize) -> Result<amplab::GridOperator> {
    let spec: OperatorSpec = op.parse()?;
    let built = spec.build(mesh)?;
    if built.side() > MAX_SIDE {
        return Err(LabError::Validation(format!("side {} exceeds the demo limit {MAX_SIDE}", built.side())));
    }
    Ok(built)
}

#[derive(Debug, Serialize)]
pub struct ProfilePoint {
    pub offset: f64,
    pub lambda: f64,
    pub c_value: f64,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct WindowProfile {
    pub lambda0: f64,
    pub gap: f64,
    pub delta: f64,
    /// The random input `f ≥ 0`.
    pub input: Vec<f64>,
    pub points: Vec<ProfilePoint>,
}

/// Plain window of one squared-Gaussian input on the given side.
pub fn window_profile_data(op: &str, mesh: usize, side: &str, seed: u64) -> Result<WindowProfile> {
    let op = build(op, mesh)?;
    let side = match side {
        "left" => Side::Left,
        "right" => Side::Right,
        other => return Err(LabError::Validation(format!("side must be left or right, got {other:?}"))),
    };
    let cfg = SolverConfig::default();
    let report = leading_eigenpair(&op, &cfg)?;
    let f = squared_gaussian(op.space(), &mut rng(seed));
    let u = op.space().ones();
    let w = scan_window(&op, &report, &f, side, WindowMode::Plain, &u, &OffsetLadder::default(), &ConeTolerance::default(), &cfg)?;
    Ok(WindowProfile {
        lambda0: report.lambda0,
        gap: report.gap,
        delta: w.delta,
        input: f.as_slice().to_vec(),
        points: w
            .profile
            .iter()
            .map(|p| ProfilePoint {
                offset: p.offset,
                lambda: p.lambda,
                c_value: p.c_value,
                passed: p.passed(),
            })
            .collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct Eigenpair {
    pub lambda0: f64,
    pub gap: f64,
    pub dim: usize,
    pub n_axis: usize,
    pub v: Vec<f64>,
    pub phi: Vec<f64>,
    pub c_dom: f64,
}

/// Leading eigenvalue with `v` (sup-normalized) and the dual `φ`.
pub fn leading_eigenvector_data(op: &str, mesh: usize) -> Result<Eigenpair> {
    let op = build(op, mesh)?;
    let report = leading_eigenpair(&op, &SolverConfig::default())?;
    let space = op.space();
    Ok(Eigenpair {
        lambda0: report.lambda0,
        gap: report.gap,
        dim: space.dim,
        n_axis: space.n_axis,
        v: report.v.as_slice().to_vec(),
        phi: report.phi.as_slice().to_vec(),
        c_dom: report.c_dom,
    })
}

#[derive(Debug, Serialize)]
pub struct SmoothingCurve {
    pub q: f64,
    pub c: f64,
    pub fit_residual: f64,
    /// `(t, norm, fitted)` rows.
    pub table: Vec<(f64, f64, f64)>,
}

/// `‖e^{tA}‖_{p→∞}` on `t = t₀·2^k`, `k = 0..7`, with its power-law fit.
/// `t₀` is the larger of `10^{-3}` and the resolution floor `2h²`.
pub fn smoothing_curve_data(op: &str, mesh: usize, p: f64) -> Result<SmoothingCurve> {
    let op = build(op, mesh)?;
    let h = op.space().h;
    let t0 = 1e-3f64.max(2.0 * h * h * (1.0 + 1e-9));
    let times: Vec<f64> = (0..7).map(|k| t0 * 2f64.powi(k)).collect();
    let opts = SmoothingOptions {
        max_residual: f64::INFINITY,
        ..Default::default()
    };
    let fit = smoothing_fit(&op, p, &times, &opts, &SolverConfig::default())?;
    Ok(SmoothingCurve {
        q: fit.q,
        c: fit.c,
        fit_residual: fit.fit_residual,
        table: fit.table,
    })
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn window_profile(op: &str, mesh: usize, side: &str, seed: u64) -> std::result::Result<String, JsError> {
    to_js(window_profile_data(op, mesh, side, seed))
}

#[wasm_bindgen]
pub fn leading_eigenvector(op: &str, mesh: usize) -> std::result::Result<String, JsError> {
    to_js(leading_eigenvector_data(op, mesh))
}

#[wasm_bindgen]
pub fn smoothing_curve(op: &str, mesh: usize, p: f64) -> std::result::Result<String, JsError> {
    to_js(smoothing_curve_data(op, mesh, p))
}
