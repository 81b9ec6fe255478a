//! Semigroup actions, `L^p → L^∞` operator norms, smoothing fits and domination indices.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::lp_norm;
use crate::error::{LabError, Result};
use crate::fit::{line_fit, log_log_fit};
use crate::grid::{GridFunction, GridSpace};
use crate::linalg::{expm_action, expm_dense, expm_ladder, SolverConfig};
use crate::operators::GridOperator;
use crate::random::ball_bump;
use crate::resolvent::Resolvent;
use crate::spectral::leading_eigenpair;

/// Largest side for which `expm_apply` forms the dense exponential.
const DENSE_EXPM_SIDE: usize = 512;

/// `e^{tA} f`.
pub fn expm_apply(op: &GridOperator, t: f64, f: &GridFunction) -> Result<GridFunction> {
    if f.len() != op.side() {
        return Err(LabError::validation("grid function does not match the operator"));
    }
    let x = if op.side() <= DENSE_EXPM_SIDE {
        expm_dense(op.matrix(), t)? * f.values()
    } else {
        expm_action(op.matrix(), t, f.values())?
    };
    GridFunction::new(op.space().clone(), x)
}

fn conjugate(p: f64) -> Result<f64> {
    if !(p >= 1.0) || p.is_infinite() {
        return Err(LabError::domain(format!("p must lie in [1, ∞), got {p}")));
    }
    Ok(if p == 1.0 { f64::INFINITY } else { p / (p - 1.0) })
}

/// Exact `‖T‖_{L^p(w) → L^∞}` of an explicit matrix:
/// `max_i (Σ_j |T_ij|^{p'} w_j^{1-p'})^{1/p'}` (and `max_ij |T_ij| / w_j` for `p = 1`).
pub fn opnorm_p_to_inf(t: &DMatrix<f64>, weights: &[f64], p: f64) -> Result<f64> {
    let q = conjugate(p)?;
    if t.ncols() != weights.len() {
        return Err(LabError::validation("matrix columns must match the weights"));
    }
    let mut best: f64 = 0.0;
    for i in 0..t.nrows() {
        let row = t.row(i);
        let value = if q.is_infinite() {
            row.iter().zip(weights).map(|(a, w)| a.abs() / w).fold(0.0, f64::max)
        } else {
            // factor out the row maximum to avoid overflow in |T_ij|^{p'}
            let scale = row.iter().zip(weights).map(|(a, w)| a.abs() / w).fold(0.0, f64::max);
            if scale == 0.0 {
                0.0
            } else {
                let s: f64 = row.iter().zip(weights).map(|(a, w)| (a.abs() / (w * scale)).powf(q) * w).sum();
                scale * s.powf(1.0 / q)
            }
        };
        best = best.max(value);
    }
    Ok(best)
}

/// Lower estimate `max_k ‖T f_k‖_∞ / ‖f_k‖_p` from probe functions.
pub fn opnorm_probe(apply: impl Fn(&GridFunction) -> Result<GridFunction> + Sync, probes: &[GridFunction], p: f64) -> Result<f64> {
    conjugate(p)?;
    let ratios: Vec<f64> = probes
        .par_iter()
        .map(|f| {
            let norm = lp_norm(f, p)?;
            if norm == 0.0 {
                return Ok(0.0);
            }
            Ok(apply(f)?.sup_norm() / norm)
        })
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// A norm value and whether it is only a probe estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormValue {
    pub value: f64,
    pub estimate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingFit {
    pub q: f64,
    pub c: f64,
    pub t_range: (f64, f64),
    pub fit_residual: f64,
    /// Smallest integer `n > q` (at least 0).
    pub n_implied: u32,
    /// `(t, ‖e^{tA}‖_{p→∞}, fitted c t^{-q})`.
    pub table: Vec<(f64, f64, f64)>,
}

/// Options for [`smoothing_fit`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingOptions {
    /// Largest accepted RMS residual of the log–log fit.
    pub max_residual: f64,
    /// Smallest accepted `t_min / h²`.
    pub resolution_factor: f64,
}

impl Default for SmoothingOptions {
    fn default() -> Self {
        SmoothingOptions {
            max_residual: 0.05,
            resolution_factor: 2.0,
        }
    }
}

/// Smallest integer strictly above `q`, clamped at zero.
pub fn implied_index(q: f64) -> u32 {
    (q.floor() + 1.0).max(0.0) as u32
}

fn check_geometric(times: &[f64]) -> Result<()> {
    if times.len() < 6 {
        return Err(LabError::domain(format!("smoothing fits need at least 6 times, got {}", times.len())));
    }
    if !(times[0] > 0.0) {
        return Err(LabError::domain("times must be positive"));
    }
    let r = times[1] / times[0];
    if !(r > 1.0) || times.windows(2).any(|w| ((w[1] / w[0]) - r).abs() > 1e-6 * r) {
        return Err(LabError::domain("time ladder must be geometric and increasing"));
    }
    Ok(())
}

/// Fits `‖e^{tA}‖_{L^p → L^∞} ≈ c t^{-q}` over a geometric time ladder.
pub fn smoothing_fit(op: &GridOperator, p: f64, times: &[f64], opts: &SmoothingOptions, cfg: &SolverConfig) -> Result<SmoothingFit> {
    conjugate(p)?;
    check_geometric(times)?;
    if op.side() > cfg.dense_cap {
        return Err(LabError::domain(format!(
            "smoothing fits need explicit exponentials; side {} exceeds the dense cap {}",
            op.side(),
            cfg.dense_cap
        )));
    }
    let h = op.space().h;
    if times[0] < opts.resolution_factor * h * h {
        return Err(LabError::domain(format!(
            "t_min = {} is below the resolution floor {} h² = {}",
            times[0],
            opts.resolution_factor,
            opts.resolution_factor * h * h
        )));
    }
    let exps = expm_ladder(op.matrix(), times)?;
    let w = &op.space().weights;
    let norms: Vec<f64> = exps.par_iter().map(|e| opnorm_p_to_inf(e, w, p)).collect::<Result<_>>()?;
    let fit = log_log_fit(times, &norms)?;
    if fit.residual > opts.max_residual {
        return Err(LabError::NoPowerLaw {
            residual: fit.residual,
            threshold: opts.max_residual,
        });
    }
    let q = -fit.slope;
    let c = fit.intercept.exp();
    let table = times.iter().zip(&norms).map(|(&t, &n)| (t, n, c * t.powf(-q))).collect();
    Ok(SmoothingFit {
        q,
        c,
        t_range: (times[0], times[times.len() - 1]),
        fit_residual: fit.residual,
        n_implied: implied_index(q),
        table,
    })
}

/// Certificate for `∫_0^{t₀} t^{n-1} e^{-λ t} c t^{-q} dt < ∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceCertificate {
    pub n: u32,
    pub lambda: f64,
    pub integral: f64,
    pub finite: bool,
}

/// Quadrature over the fitted power law. The substitution `s = t^{n-q}` turns
/// the integrable singularity at 0 into a smooth integrand.
pub fn laplace_certificate(fit: &SmoothingFit, n: u32, lambda: f64) -> LaplaceCertificate {
    let a = n as f64 - fit.q;
    let t0 = fit.t_range.1;
    if !(a > 0.0) {
        return LaplaceCertificate {
            n,
            lambda,
            integral: f64::INFINITY,
            finite: false,
        };
    }
    let simpson = |panels: usize| {
        let top = t0.powf(a);
        let hstep = top / panels as f64;
        let g = |s: f64| (fit.c / a) * (-lambda * s.powf(1.0 / a)).exp();
        let mut acc = g(0.0) + g(top);
        for k in 1..panels {
            acc += g(k as f64 * hstep) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * hstep / 3.0
    };
    let mut panels = 256;
    let mut prev = simpson(panels);
    let mut converged = false;
    let mut integral = prev;
    while panels < 1 << 20 {
        panels *= 2;
        integral = simpson(panels);
        if (integral - prev).abs() <= 1e-10 * integral.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        prev = integral;
    }
    LaplaceCertificate {
        n,
        lambda,
        integral,
        finite: integral.is_finite() && converged,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DominationVerdict {
    Robust,
    Degenerate,
}

/// How `‖Res(σ)^n‖_{p→∞}` is evaluated on each rung.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Exact norms up to the dense cap, bump probes above it.
    Auto,
    Exact,
    /// Centered ball bumps of widths `w_min·√2^j` up to `w_max`.
    Bumps { w_min_h: f64, w_max: f64 },
}

/// Probe point of the resolvent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaRule {
    Fixed(f64),
    /// `σ = λ₀ + max(1, |λ₀|)` on every rung.
    AboveBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationOptions {
    pub p: f64,
    pub n_max: u32,
    pub sigma: SigmaRule,
    pub mode: NormMode,
    /// Growth exponents at or below this count as robust.
    pub threshold: f64,
}

impl Default for DominationOptions {
    fn default() -> Self {
        DominationOptions {
            p: 2.0,
            n_max: 1,
            sigma: SigmaRule::AboveBound,
            mode: NormMode::Auto,
            threshold: 0.1,
        }
    }
}

/// One rung of a domination study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationRung {
    pub mesh: usize,
    pub h: f64,
    pub sigma: f64,
    /// `‖Res(σ)^n‖_{p→∞}` for `n = 1..=n_max`.
    pub norms: Vec<NormValue>,
    /// Bump-probe curves `(w, ratio)` per power when probes were used.
    pub curves: Vec<Vec<(f64, f64)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationDiagnostic {
    pub n: u32,
    pub growth_exponent: f64,
    pub fit_residual: f64,
    pub verdict: DominationVerdict,
    pub estimate: bool,
    /// `(h, norm, fitted prediction)`.
    pub table: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationStudy {
    pub p: f64,
    pub rungs: Vec<DominationRung>,
    pub diagnostics: Vec<DominationDiagnostic>,
    /// Smallest robust `n`, if any.
    pub index: Option<u32>,
}

/// Bump widths `w_min · √2^j` below `w_max`, then `w_max` itself.
pub fn bump_widths(w_min: f64, w_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut w = w_min;
    while w < w_max * (1.0 - 1e-12) {
        out.push(w);
        w *= std::f64::consts::SQRT_2;
    }
    out.push(w_max);
    out
}

fn center_node(space: &GridSpace) -> [f64; 3] {
    let mut best = (f64::INFINITY, [0.0; 3]);
    for c in &space.coords {
        let d: f64 = (0..space.dim).map(|a| (c[a] - 0.5).powi(2)).sum();
        if d < best.0 {
            best = (d, *c);
        }
    }
    best.1
}

/// `‖Res(σ)^n f_w‖_∞ / ‖f_w‖_p` for centered bumps `f_w`; each entry of the
/// result is the running maximum over widths up to `w`.
pub fn bump_probe_curve(res: &Resolvent, space: &Arc<GridSpace>, p: f64, n: u32, widths: &[f64]) -> Result<Vec<(f64, f64)>> {
    let center = center_node(space);
    let raw: Vec<(f64, f64)> = widths
        .par_iter()
        .map(|&w| {
            let f = ball_bump(space, center, w, p)?;
            let mut g = f.clone();
            for _ in 0..n {
                g = res.apply(&g)?;
            }
            Ok((w, g.sup_norm() / lp_norm(&f, p)?))
        })
        .collect::<Result<_>>()?;
    let mut best: f64 = 0.0;
    Ok(raw
        .into_iter()
        .map(|(w, r)| {
            best = best.max(r);
            (w, best)
        })
        .collect())
}

fn rung(op: &GridOperator, mesh: usize, opts: &DominationOptions, cfg: &SolverConfig) -> Result<DominationRung> {
    let sigma = match opts.sigma {
        SigmaRule::Fixed(s) => s,
        SigmaRule::AboveBound => {
            let l0 = leading_eigenpair(op, cfg)?.lambda0;
            l0 + l0.abs().max(1.0)
        }
    };
    let res = Resolvent::new(op, sigma, cfg)?;
    let space = op.space();
    let exact = match opts.mode {
        NormMode::Exact => true,
        NormMode::Auto => op.side() <= cfg.dense_cap,
        NormMode::Bumps { .. } => false,
    };
    let mut norms = Vec::new();
    let mut curves = Vec::new();
    if exact {
        let id = DMatrix::identity(op.side(), op.side());
        let inv = res_matrix(&res, &id)?;
        let mut power = inv.clone();
        for k in 1..=opts.n_max {
            if k > 1 {
                power = &inv * &power;
            }
            norms.push(NormValue {
                value: opnorm_p_to_inf(&power, &space.weights, opts.p)?,
                estimate: false,
            });
        }
    } else {
        let (w_min_h, w_max) = match opts.mode {
            NormMode::Bumps { w_min_h, w_max } => (w_min_h, w_max),
            _ => (0.5, 0.25),
        };
        let widths = bump_widths(w_min_h * space.h, w_max);
        for k in 1..=opts.n_max {
            let curve = bump_probe_curve(&res, space, opts.p, k, &widths)?;
            norms.push(NormValue {
                value: curve.last().map_or(0.0, |c| c.1),
                estimate: true,
            });
            curves.push(curve);
        }
    }
    Ok(DominationRung {
        mesh,
        h: space.h,
        sigma,
        norms,
        curves,
    })
}

fn res_matrix(res: &Resolvent, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    res.apply_matrix(rhs)
}

/// Fits the growth of `‖Res(σ)^n‖_{p→∞}` against `1/h` along a mesh ladder.
pub fn domination_index(
    build: impl Fn(usize) -> Result<GridOperator> + Sync,
    ladder: &[usize],
    opts: &DominationOptions,
    cfg: &SolverConfig,
) -> Result<DominationStudy> {
    if ladder.len() < 2 {
        return Err(LabError::domain("domination studies need at least two meshes"));
    }
    if opts.n_max == 0 {
        return Err(LabError::domain("n_max must be at least 1"));
    }
    conjugate(opts.p)?;
    let rungs: Vec<DominationRung> = ladder
        .iter()
        .map(|&m| rung(&build(m)?, m, opts, cfg))
        .collect::<Result<_>>()?;
    let inv_h: Vec<f64> = rungs.iter().map(|r| 1.0 / r.h).collect();
    let mut diagnostics = Vec::new();
    for k in 0..opts.n_max as usize {
        let norms: Vec<f64> = rungs.iter().map(|r| r.norms[k].value).collect();
        let fit = log_log_fit(&inv_h, &norms)?;
        let table = rungs
            .iter()
            .zip(&norms)
            .map(|(r, &n)| (r.h, n, fit.predict((1.0 / r.h).ln()).exp()))
            .collect();
        diagnostics.push(DominationDiagnostic {
            n: k as u32 + 1,
            growth_exponent: fit.slope,
            fit_residual: fit.residual,
            verdict: if fit.slope <= opts.threshold {
                DominationVerdict::Robust
            } else {
                DominationVerdict::Degenerate
            },
            estimate: rungs.iter().any(|r| r.norms[k].estimate),
            table,
        });
    }
    let index = diagnostics.iter().find(|d| d.verdict == DominationVerdict::Robust).map(|d| d.n);
    Ok(DominationStudy {
        p: opts.p,
        rungs,
        diagnostics,
        index,
    })
}

/// Growth exponent of a bump-probe curve in `1/w` (slope of `ln ratio` against `ln(1/w)`).
pub fn curve_growth(curve: &[(f64, f64)]) -> Result<f64> {
    let x: Vec<f64> = curve.iter().map(|c| (1.0 / c.0).ln()).collect();
    let y: Vec<f64> = curve.iter().map(|c| c.1.ln()).collect();
    Ok(line_fit(&x, &y)?.slope)
}

/// Writes a fit table with columns `<x_label>,norm,fitted`.
pub fn write_fit_table(x_label: &str, rows: &[(f64, f64, f64)], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([x_label, "norm", "fitted"])?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a fit table back; returns the x label and the rows.
pub fn read_fit_table(input: impl Read) -> Result<(String, Vec<(f64, f64, f64)>)> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.len() != 3 || &headers[1] != "norm" || &headers[2] != "fitted" {
        return Err(LabError::Parse(format!("unexpected fit-table header {headers:?}")));
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<(f64, f64, f64)>, _>>()?;
    Ok((headers[0].to_string(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{build_laplacian, build_rank_one, BoundaryCondition};

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn exponential_examples() {
        let op = build_rank_one(16).unwrap();
        let f = GridFunction::from_fn(op.space(), |i, _| if i % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        assert_eq!(expm_apply(&op, 0.0, &f).unwrap().values(), f.values());
        let g = expm_apply(&op, 1.0, &f).unwrap();
        assert!((g.values() - f.values() * (-1f64).exp()).amax() < 1e-10);
        let neu = build_laplacian(1, 700, BoundaryCondition::Neumann).unwrap();
        let ones = neu.space().ones();
        let e = expm_apply(&neu, 0.01, &ones).unwrap();
        assert!((e.values().add_scalar(-1.0)).amax() < 1e-10);
    }

    #[test]
    fn norm_examples() {
        let n = 16;
        let w = vec![1.0 / n as f64; n];
        let id = DMatrix::identity(n, n);
        assert!((opnorm_p_to_inf(&id, &w, 2.0).unwrap() - 4.0).abs() < 1e-12);
        let p = DMatrix::from_fn(n, n, |_, j| w[j]);
        assert!((opnorm_p_to_inf(&p, &w, 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(opnorm_p_to_inf(&DMatrix::zeros(n, n), &w, 2.0).unwrap(), 0.0);
        assert!(opnorm_p_to_inf(&id, &w, f64::INFINITY).is_err());
        assert!((opnorm_p_to_inf(&id, &w, 1.0).unwrap() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn probes_bound_the_exact_norm_from_below() {
        let op = build_laplacian(1, 40, BoundaryCondition::robin(1.0)).unwrap();
        let res = Resolvent::new(&op, 1.0, &cfg()).unwrap();
        let inv = res_matrix(&res, &DMatrix::identity(40, 40)).unwrap();
        let exact = opnorm_p_to_inf(&inv, &op.space().weights, 2.0).unwrap();
        let probes: Vec<GridFunction> = bump_widths(0.05, 0.5)
            .into_iter()
            .map(|w| ball_bump(op.space(), [0.5, 0.0, 0.0], w, 2.0).unwrap())
            .collect();
        let est = opnorm_probe(|f| res.apply(f), &probes, 2.0).unwrap();
        assert!(est <= exact * (1.0 + 1e-12) && est > 0.3 * exact);
    }

    #[test]
    fn smoothing_fit_rank_one_is_flat() {
        let op = build_rank_one(64).unwrap();
        let times: Vec<f64> = (0..8).map(|k| 1e-3 * 100f64.powf(k as f64 / 7.0)).collect();
        let fit = smoothing_fit(&op, 2.0, &times, &SmoothingOptions::default(), &cfg()).unwrap();
        assert!(fit.q.abs() <= 0.05, "{}", fit.q);
        assert_eq!(fit.n_implied, 1);
        assert!(smoothing_fit(&op, 2.0, &times[..5], &SmoothingOptions::default(), &cfg()).is_err());
    }

    #[test]
    fn laplace_certificate_matches_the_gamma_function() {
        let fit = SmoothingFit {
            q: 0.25,
            c: 2.0,
            t_range: (1e-3, 60.0),
            fit_residual: 0.0,
            n_implied: 1,
            table: Vec::new(),
        };
        let cert = laplace_certificate(&fit, 1, 1.0);
        // ∫_0^∞ 2 t^{-1/4} e^{-t} dt = 2 Γ(3/4)
        assert!(cert.finite);
        assert!((cert.integral - 2.0 * libm::tgamma(0.75)).abs() < 1e-6);
        let zero = laplace_certificate(&fit, 1, 0.0);
        assert!((zero.integral - 2.0 * 60f64.powf(0.75) / 0.75).abs() < 1e-9 * zero.integral);
        let bad = SmoothingFit { q: 1.5, ..fit };
        assert!(!laplace_certificate(&bad, 1, 1.0).finite);
    }

    #[test]
    fn robin_domination_is_robust() {
        let study = domination_index(
            |n| build_laplacian(1, n, BoundaryCondition::robin(1.0)),
            &[25, 50, 100, 200],
            &DominationOptions::default(),
            &cfg(),
        )
        .unwrap();
        assert_eq!(study.index, Some(1));
        assert!(!study.diagnostics[0].estimate);
    }

    #[test]
    fn fit_table_round_trips() {
        let rows = vec![(1e-3, 2.5, 2.4), (2e-3, 2.0, 2.1)];
        let mut buf = Vec::new();
        write_fit_table("t", &rows, &mut buf).unwrap();
        let (label, back) = read_fit_table(&buf[..]).unwrap();
        assert_eq!(label, "t");
        assert_eq!(back, rows);
        let mut empty = Vec::new();
        write_fit_table("h", &[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), "h,norm,fitted\n");
    }
}
