//! Resolvents, the multi-point expansion, pole diagnostics and window scans.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::{cone_dominates, cone_nonneg, gauge_norm, ConeTolerance, ConeVerdict};
use crate::error::{LabError, Result};
use crate::fit::log_log_fit;
use crate::grid::GridFunction;
use crate::linalg::{ShiftedSystem, SolverConfig};
use crate::operators::GridOperator;
use crate::spectral::SpectralReport;

/// `Res(λ, A) = (λ I - A)^{-1}`, factored once for repeated application.
#[derive(Debug)]
pub struct Resolvent<'a> {
    op: &'a GridOperator,
    sys: ShiftedSystem,
}

impl<'a> Resolvent<'a> {
    pub fn new(op: &'a GridOperator, lambda: f64, cfg: &SolverConfig) -> Result<Self> {
        let sys = ShiftedSystem::new(op.matrix(), lambda, &op.space().weights, op.is_self_adjoint(), cfg)?;
        Ok(Resolvent { op, sys })
    }

    pub fn lambda(&self) -> f64 {
        self.sys.sigma()
    }

    pub fn condition(&self) -> f64 {
        self.sys.condition()
    }

    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        check_space(self.op, f)?;
        Ok(GridFunction::from_parts(self.op.space().clone(), self.sys.solve(f.values())?))
    }

    /// Applies the resolvent to every column of `rhs`.
    pub fn apply_matrix(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.sys.solve_matrix(rhs)
    }
}

fn check_space(op: &GridOperator, f: &GridFunction) -> Result<()> {
    if f.space().as_ref() != op.space().as_ref() {
        return Err(LabError::validation(format!(
            "grid function of length {} does not live on the operator's grid (side {})",
            f.len(),
            op.side()
        )));
    }
    Ok(())
}

/// Solves `(λ I - A) x = f`.
pub fn apply_resolvent(op: &GridOperator, lambda: f64, f: &GridFunction, cfg: &SolverConfig) -> Result<GridFunction> {
    Resolvent::new(op, lambda, cfg)?.apply(f)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCheck {
    pub m: usize,
    pub lambda: f64,
    pub points: Vec<f64>,
    /// `‖lhs - rhs‖_∞ / ‖lhs‖_∞`.
    pub residual: f64,
}

/// Evaluates the right-hand side of
///
/// `Res(λ) = Σ_{k=1}^m Π_{j<k}(μ_j - λ) Res(μ_1)…Res(μ_k) + Π_j(μ_j - λ) Res(λ) Res(μ_1)…Res(μ_m)`
///
/// applied to `f`, with every product evaluated right to left as written, and
/// compares it with a direct solve at `λ`.
pub fn expansion_eval(
    op: &GridOperator,
    lambda: f64,
    points: &[f64],
    f: &GridFunction,
    cfg: &SolverConfig,
) -> Result<(GridFunction, ExpansionCheck)> {
    check_space(op, f)?;
    let at_lambda = Resolvent::new(op, lambda, cfg)?;
    let at_points: Vec<Resolvent> = points.iter().map(|&mu| Resolvent::new(op, mu, cfg)).collect::<Result<_>>()?;
    let chain = |k: usize| -> Result<GridFunction> {
        let mut g = f.clone();
        for r in at_points[..k].iter().rev() {
            g = r.apply(&g)?;
        }
        Ok(g)
    };
    let lhs = at_lambda.apply(f)?;
    let mut rhs = GridFunction::constant(op.space(), 0.0);
    let mut coef = 1.0;
    for k in 1..=points.len() {
        rhs = rhs.axpy(coef, &chain(k)?);
        coef *= points[k - 1] - lambda;
    }
    rhs = rhs.axpy(coef, &at_lambda.apply(&chain(points.len())?)?);
    let scale = lhs.sup_norm();
    let diff = (lhs.values() - rhs.values()).amax();
    let residual = if scale > 0.0 { diff / scale } else { diff };
    Ok((
        rhs,
        ExpansionCheck {
            m: points.len(),
            lambda,
            points: points.to_vec(),
            residual,
        },
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct PoleOrder {
    pub order: u32,
    /// Fitted `m` in `‖Res(λ₀+ε) f‖_∞ ~ C ε^{-m}`.
    pub exponent: f64,
    pub fit_residual: f64,
    pub eps: Vec<f64>,
    pub norms: Vec<f64>,
}

/// Fits the blow-up rate of `‖Res(λ₀ + ε) f‖_∞` as `ε → 0`.
pub fn pole_order(op: &GridOperator, report: &SpectralReport, f: &GridFunction, cfg: &SolverConfig) -> Result<PoleOrder> {
    check_space(op, f)?;
    let overlap = report.phi.pairing(f);
    let size = report.phi.map(f64::abs).integral() * f.sup_norm();
    if !(overlap.abs() > 1e-8 * size) {
        return Err(LabError::precondition(format!(
            "⟨φ, f⟩ = {overlap:e} vanishes; the leading pole term is absent"
        )));
    }
    let top = if report.gap.is_finite() { report.gap } else { 1.0 };
    let floor = 1e-8 * report.scale;
    let eps: Vec<f64> = (8..=20).map(|j| top * 0.5f64.powi(j)).filter(|e| *e >= floor).collect();
    if eps.len() < 3 {
        return Err(LabError::domain("spectral gap too small to resolve the pole"));
    }
    let norms: Vec<f64> = eps
        .par_iter()
        .map(|e| Ok(apply_resolvent(op, report.lambda0 + e, f, cfg)?.sup_norm()))
        .collect::<Result<_>>()?;
    let fit = log_log_fit(&eps, &norms)?;
    let exponent = -fit.slope;
    if exponent < 0.5 {
        return Err(LabError::NoPole { exponent });
    }
    Ok(PoleOrder {
        order: exponent.round() as u32,
        exponent,
        fit_residual: fit.residual,
        eps,
        norms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Sign only: `Res f ≥ 0` on the right, `Res f ≤ 0` on the left.
    Plain,
    /// `Res f ⪰ u` on the right, `Res f ⪯ -u` on the left.
    Strong,
}

/// Geometric offsets `top · gap · ratio^{-j}`, `j = 1..=count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OffsetLadder {
    pub ratio: f64,
    pub count: usize,
    /// Fraction of the spectral gap the ladder starts from.
    pub top: f64,
}

impl Default for OffsetLadder {
    fn default() -> Self {
        OffsetLadder {
            ratio: 2.0,
            count: 20,
            top: 1.0,
        }
    }
}

impl OffsetLadder {
    pub fn new(ratio: f64, count: usize) -> Result<Self> {
        let l = OffsetLadder { ratio, count, top: 1.0 };
        l.validate()?;
        Ok(l)
    }

    fn validate(&self) -> Result<()> {
        if !(self.ratio > 1.0) || self.count == 0 || !(self.top > 0.0 && self.top <= 1.0) {
            return Err(LabError::domain(format!(
                "offset ladder needs ratio > 1, count >= 1 and top in (0, 1] (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Offsets in increasing order for a given gap.
    pub fn offsets(&self, gap: f64) -> Result<Vec<f64>> {
        self.validate()?;
        let base = if gap.is_finite() { gap } else { 1.0 };
        if !(base > 0.0) {
            return Err(LabError::domain("window scans need a positive spectral gap"));
        }
        let mut v: Vec<f64> = (1..=self.count as i32).map(|j| self.top * base * self.ratio.powi(-j)).collect();
        v.reverse();
        if v[0] <= 0.0 {
            return Err(LabError::domain("offset ladder underflows; use fewer rungs or a smaller ratio"));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    pub offset: f64,
    pub lambda: f64,
    /// `None` when the solve at this point failed.
    pub verdict: Option<ConeVerdict>,
    /// `min_i s (Res f)_i / u_i` with `s = ±1` the side's sign.
    pub c_value: f64,
    pub error: Option<String>,
}

impl WindowPoint {
    pub fn passed(&self) -> bool {
        self.verdict.is_some_and(|v| v.holds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub side: Side,
    pub mode: WindowMode,
    /// Largest offset of the passing prefix of the ladder (0 when the first offset fails).
    pub delta: f64,
    pub profile: Vec<WindowPoint>,
}

impl Window {
    pub fn is_empty(&self) -> bool {
        self.delta == 0.0
    }

    /// Whether every scanned offset passed.
    pub fn is_full(&self) -> bool {
        self.profile.iter().all(WindowPoint::passed)
    }
}

/// Checks `f ≥ 0, f ≠ 0` exactly.
fn require_nonneg_input(f: &GridFunction) -> Result<()> {
    if let Some(i) = f.as_slice().iter().position(|x| *x < 0.0) {
        return Err(LabError::domain(format!(
            "window scans need f >= 0; entry {i} is {}",
            f.as_slice()[i]
        )));
    }
    if f.sup_norm() == 0.0 {
        return Err(LabError::domain("window scans need f != 0"));
    }
    Ok(())
}

/// Scans `λ = λ₀ ± ε` along the ladder and records where the (anti-)maximum principle holds.
#[allow(clippy::too_many_arguments)]
pub fn scan_window(
    op: &GridOperator,
    report: &SpectralReport,
    f: &GridFunction,
    side: Side,
    mode: WindowMode,
    u: &GridFunction,
    ladder: &OffsetLadder,
    tol: &ConeTolerance,
    cfg: &SolverConfig,
) -> Result<Window> {
    check_space(op, f)?;
    require_nonneg_input(f)?;
    gauge_norm(f, u)?;
    let offsets = ladder.offsets(report.gap)?;
    let s = side.sign();
    let profile: Vec<WindowPoint> = offsets
        .par_iter()
        .map(|&offset| {
            let lambda = report.lambda0 + s * offset;
            let x = match apply_resolvent(op, lambda, f, cfg) {
                Ok(x) => x.scaled(s),
                Err(e) => {
                    return WindowPoint {
                        offset,
                        lambda,
                        verdict: None,
                        c_value: f64::NAN,
                        error: Some(e.to_string()),
                    }
                }
            };
            let c_value = x
                .as_slice()
                .iter()
                .zip(u.as_slice())
                .map(|(a, b)| a / b)
                .fold(f64::INFINITY, f64::min);
            let verdict = match mode {
                WindowMode::Plain => cone_nonneg(&x, tol, x.sup_norm()),
                WindowMode::Strong => match cone_dominates(&x, u, tol) {
                    Ok((v, _)) => v,
                    Err(e) => {
                        return WindowPoint {
                            offset,
                            lambda,
                            verdict: None,
                            c_value,
                            error: Some(e.to_string()),
                        }
                    }
                },
            };
            WindowPoint {
                offset,
                lambda,
                verdict: Some(verdict),
                c_value,
                error: None,
            }
        })
        .collect();
    let delta = profile
        .iter()
        .take_while(|p| p.passed())
        .last()
        .map_or(0.0, |p| p.offset);
    Ok(Window {
        side,
        mode,
        delta,
        profile,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct WindowRow {
    offset: f64,
    lambda: f64,
    verdict: String,
    margin: f64,
    c_value: f64,
}

/// Writes `offset,lambda,verdict,margin,c_value` rows (`verdict` is pass, fail or error).
pub fn write_window_csv(window: &Window, out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["offset", "lambda", "verdict", "margin", "c_value"])?;
    for p in &window.profile {
        let (verdict, margin) = match p.verdict {
            Some(v) => (if v.holds { "pass" } else { "fail" }, v.margin),
            None => ("error", f64::NAN),
        };
        w.serialize(WindowRow {
            offset: p.offset,
            lambda: p.lambda,
            verdict: verdict.into(),
            margin,
            c_value: p.c_value,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a window CSV back as `(offset, lambda, verdict, margin, c_value)` tuples.
pub fn read_window_csv(input: impl Read) -> Result<Vec<(f64, f64, String, f64, f64)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: WindowRow = row?;
        if !matches!(row.verdict.as_str(), "pass" | "fail" | "error") {
            return Err(LabError::Parse(format!("unknown verdict {:?}", row.verdict)));
        }
        out.push((row.offset, row.lambda, row.verdict, row.margin, row.c_value));
    }
    Ok(out)
}

/// One point of the left sweep in a transfer check.
#[derive(Clone, Debug, Serialize)]
pub struct TransferPoint {
    pub lambda: f64,
    /// Smallest `c ≥ 0` with `Res(λ) f ≥ -c u`.
    pub measured: f64,
    /// Upper bound for `measured` obtained from the expansion through the chain `μ_1 … μ_n`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TransferCase {
    /// The passing right-side point, `None` if no scanned point passed.
    pub mu: Option<f64>,
    pub points: Vec<TransferPoint>,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TransferReport {
    pub chain: Vec<f64>,
    pub cases: Vec<TransferCase>,
    pub holds: bool,
}

/// Options for [`window_transfer_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferOptions {
    /// Domination index `n`: the chain has this many points.
    pub index: usize,
    /// Number of sweep points `λ₀ - k·gap/(count+1)`.
    pub count: usize,
    /// Relative slack when comparing a measured constant with its bound.
    pub rel: f64,
}

impl Default for TransferOptions {
    fn default() -> Self {
        TransferOptions {
            index: 1,
            count: 10,
            rel: 1e-8,
        }
    }
}

/// `max(0, max_i -g_i / u_i)`: the smallest `c ≥ 0` with `g ≥ -c u`.
fn lower_constant(g: &GridFunction, u: &GridFunction) -> f64 {
    g.as_slice()
        .iter()
        .zip(u.as_slice())
        .map(|(a, b)| -a / b)
        .fold(0.0, f64::max)
}

/// Transfers a right-side verdict to a sweep of points left of `λ₀`.
///
/// For each `f` the largest passing offset of a plain right scan fixes `μ_1`;
/// the chain `μ_j = μ_1 + (j-1)·gap/2` feeds the expansion, which bounds the
/// negative part of `Res(λ) f` at every sweep point by
/// `Σ_k Π_{j<k}|μ_j - λ| c_k + Π_j|μ_j - λ| ‖Res(λ) Res(μ_1)…Res(μ_n) f‖_u`,
/// where `c_k` is the lower constant of `Res(μ_1)…Res(μ_k) f`. A point holds
/// when the measured constant respects this bound up to the relative slack.
pub fn window_transfer_check(
    op: &GridOperator,
    report: &SpectralReport,
    batch: &[GridFunction],
    u: &GridFunction,
    tol: &ConeTolerance,
    opts: &TransferOptions,
    cfg: &SolverConfig,
) -> Result<TransferReport> {
    if opts.index == 0 || opts.count == 0 {
        return Err(LabError::domain("transfer check needs index >= 1 and count >= 1"));
    }
    let gap = if report.gap.is_finite() { report.gap } else { 1.0 };
    let ladder = OffsetLadder {
        ratio: 2.0,
        count: 8,
        top: 1.0,
    };
    let lambdas: Vec<f64> = (1..=opts.count)
        .map(|k| report.lambda0 - gap * k as f64 / (opts.count + 1) as f64)
        .collect();
    let mut chain_used = Vec::new();
    let cases: Vec<TransferCase> = batch
        .iter()
        .map(|f| {
            let right = scan_window(op, report, f, Side::Right, WindowMode::Plain, u, &ladder, tol, cfg)?;
            if right.is_empty() {
                return Ok(TransferCase {
                    mu: None,
                    points: Vec::new(),
                    holds: false,
                });
            }
            let mu = report.lambda0 + right.delta;
            let chain: Vec<f64> = (0..opts.index).map(|j| mu + j as f64 * gap / 2.0).collect();
            let resolvents: Vec<Resolvent> = chain.iter().map(|&m| Resolvent::new(op, m, cfg)).collect::<Result<_>>()?;
            let mut partial = Vec::with_capacity(chain.len());
            for k in 1..=chain.len() {
                let mut g = f.clone();
                for r in resolvents[..k].iter().rev() {
                    g = r.apply(&g)?;
                }
                partial.push(g);
            }
            let tail = partial.last().expect("chain is nonempty");
            let points = lambdas
                .par_iter()
                .map(|&lambda| {
                    let at = Resolvent::new(op, lambda, cfg)?;
                    let measured = lower_constant(&at.apply(f)?, u);
                    let mut bound = 0.0;
                    let mut coef = 1.0;
                    for (k, g) in partial.iter().enumerate() {
                        bound += coef * lower_constant(g, u);
                        coef *= (chain[k] - lambda).abs();
                    }
                    bound += coef * gauge_norm(&at.apply(tail)?, u)?;
                    Ok(TransferPoint {
                        lambda,
                        measured,
                        bound,
                        holds: measured <= bound * (1.0 + opts.rel) + opts.rel * f64::MIN_POSITIVE,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if chain_used.is_empty() {
                chain_used = chain;
            }
            Ok(TransferCase {
                mu: Some(mu),
                holds: points.iter().all(|p| p.holds),
                points,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TransferReport {
        chain: chain_used,
        holds: !cases.is_empty() && cases.iter().all(|c| c.holds),
        cases,
    })
}

/// `Res(λ₀ + ε) f - P f / ε`, scaled by `ε`, along the given offsets (pole decomposition check).
pub fn pole_remainder(op: &GridOperator, report: &SpectralReport, f: &GridFunction, eps: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>> {
    let pf = report.v.scaled(report.phi.pairing(f));
    eps.iter()
        .map(|&e| {
            let x = apply_resolvent(op, report.lambda0 + e, f, cfg)?;
            let diff: DVector<f64> = x.values() - pf.values() / e;
            Ok(diff.amax() * e)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{build_laplacian, build_rank_one, BoundaryCondition};
    use crate::random;
    use crate::spectral::leading_eigenpair;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn rank_one_resolvent_closed_form() {
        let op = build_rank_one(32).unwrap();
        let s = op.space().clone();
        let x = apply_resolvent(&op, 1.0, &s.ones(), &cfg()).unwrap();
        assert!((x.values().add_scalar(-1.0)).amax() < 1e-14);
        let mut rng = random::rng(3);
        let f = GridFunction::new(s.clone(), random::gaussian_vector(&mut rng, 32)).unwrap();
        let lam = 0.5;
        let x = apply_resolvent(&op, lam, &f, &cfg()).unwrap();
        let want = (f.values() * lam).add_scalar(f.integral()) / (lam * (lam + 1.0));
        assert!((x.values() - &want).amax() <= 1e-10 * want.amax());
        assert!(matches!(apply_resolvent(&op, 0.0, &f, &cfg()), Err(LabError::InSpectrum { .. })));
    }

    #[test]
    fn expansion_degenerate_and_classical_cases() {
        let op = build_rank_one(32).unwrap();
        let f = op.space().ones().axpy(1.0, &GridFunction::from_fn(op.space(), |_, x| x[0]).unwrap());
        let (_, c0) = expansion_eval(&op, 0.5, &[], &f, &cfg()).unwrap();
        assert_eq!(c0.residual, 0.0);
        let (_, c3) = expansion_eval(&op, 0.5, &[1.0, 2.0, 3.0], &f, &cfg()).unwrap();
        assert!(c3.residual <= 1e-9);
        assert_eq!(c3.m, 3);
    }

    #[test]
    fn pole_orders() {
        let op = build_rank_one(16).unwrap();
        let r = leading_eigenpair(&op, &cfg()).unwrap();
        assert_eq!(pole_order(&op, &r, &op.space().ones(), &cfg()).unwrap().order, 1);
        let mean_zero = GridFunction::from_fn(op.space(), |i, _| if i % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        assert!(matches!(pole_order(&op, &r, &mean_zero, &cfg()), Err(LabError::Precondition(_))));

        let neu = build_laplacian(1, 40, BoundaryCondition::Neumann).unwrap();
        let rn = leading_eigenpair(&neu, &cfg()).unwrap();
        let f = GridFunction::from_fn(neu.space(), |_, x| 1.0 + (-(x[0] - 0.3).powi(2) * 50.0).exp()).unwrap();
        assert_eq!(pole_order(&neu, &rn, &f, &cfg()).unwrap().order, 1);
    }

    #[test]
    fn rank_one_windows() {
        let op = build_rank_one(64).unwrap();
        let r = leading_eigenpair(&op, &cfg()).unwrap();
        let u = op.space().ones();
        let ladder = OffsetLadder::default();
        let tol = ConeTolerance::default();
        let right = scan_window(&op, &r, &u, Side::Right, WindowMode::Plain, &u, &ladder, &tol, &cfg()).unwrap();
        assert!(right.is_full());
        let left = scan_window(&op, &r, &u, Side::Left, WindowMode::Plain, &u, &ladder, &tol, &cfg()).unwrap();
        assert!(left.is_full());
        assert!((left.delta - 0.5).abs() < 1e-12);
        let neg = u.scaled(-1.0);
        assert!(scan_window(&op, &r, &neg, Side::Left, WindowMode::Plain, &u, &ladder, &tol, &cfg()).is_err());
    }

    #[test]
    fn dirichlet_strong_window_degenerates_with_the_mesh() {
        let mut cs = Vec::new();
        for n in [24, 49, 99] {
            let op = build_laplacian(1, n, BoundaryCondition::Dirichlet).unwrap();
            let r = leading_eigenpair(&op, &cfg()).unwrap();
            let u = op.space().ones();
            let w = scan_window(
                &op,
                &r,
                &u,
                Side::Right,
                WindowMode::Strong,
                &u,
                &OffsetLadder::new(2.0, 6).unwrap(),
                &ConeTolerance::default(),
                &cfg(),
            )
            .unwrap();
            // normalized c-profile: c / ‖Res f‖_∞ ~ h
            let x = apply_resolvent(&op, w.profile[0].lambda, &u, &cfg()).unwrap();
            cs.push(w.profile[0].c_value / x.sup_norm());
        }
        assert!(cs[0] > 1.8 * cs[1] && cs[1] > 1.8 * cs[2], "{cs:?}");
    }

    #[test]
    fn window_csv_round_trips() {
        let op = build_rank_one(8).unwrap();
        let r = leading_eigenpair(&op, &cfg()).unwrap();
        let u = op.space().ones();
        let w = scan_window(&op, &r, &u, Side::Left, WindowMode::Strong, &u, &OffsetLadder::new(1.5, 5).unwrap(), &ConeTolerance::default(), &cfg()).unwrap();
        let mut buf = Vec::new();
        write_window_csv(&w, &mut buf).unwrap();
        let rows = read_window_csv(&buf[..]).unwrap();
        assert_eq!(rows.len(), 5);
        for (row, p) in rows.iter().zip(&w.profile) {
            assert_eq!(row.0, p.offset);
            assert_eq!(row.1, p.lambda);
            assert_eq!(row.4, p.c_value);
            assert_eq!(row.3, p.verdict.unwrap().margin);
        }
        assert!(String::from_utf8(buf).unwrap().starts_with("offset,lambda,verdict,margin,c_value\n"));
    }

    #[test]
    fn transfer_holds_for_robin_and_rank_one() {
        let op = build_laplacian(1, 30, BoundaryCondition::robin(1.0)).unwrap();
        let r = leading_eigenpair(&op, &cfg()).unwrap();
        let u = op.space().ones();
        let mut rng = random::rng(11);
        let batch: Vec<GridFunction> = (0..3).map(|_| random::squared_gaussian(op.space(), &mut rng)).collect();
        let rep = window_transfer_check(&op, &r, &batch, &u, &ConeTolerance::default(), &TransferOptions::default(), &cfg()).unwrap();
        assert!(rep.holds);

        let op = build_rank_one(16).unwrap();
        let r = leading_eigenpair(&op, &cfg()).unwrap();
        let u = op.space().ones();
        let rep = window_transfer_check(&op, &r, std::slice::from_ref(&u), &u, &ConeTolerance::default(), &TransferOptions::default(), &cfg()).unwrap();
        assert!(rep.holds);
        assert_eq!(rep.cases[0].points.len(), 10);
    }

    #[test]
    fn pole_remainder_vanishes() {
        let op = build_laplacian(1, 20, BoundaryCondition::Neumann).unwrap();
        let r = leading_eigenpair(&op, &cfg()).unwrap();
        let f = GridFunction::from_fn(op.space(), |_, x| 1.0 + x[0]).unwrap();
        let eps = [1e-1, 1e-2, 1e-3];
        let rem = pole_remainder(&op, &r, &f, &eps, &cfg()).unwrap();
        assert!(rem[2] < rem[1] && rem[1] < rem[0]);
        assert!(rem[2] < 1e-2 * f.sup_norm());
    }
}
