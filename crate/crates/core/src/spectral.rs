//! Leading eigenpairs, dual eigenvectors and the spectral assumption.
//!
//! Up to `SolverConfig::eig_dense_cap` the whole spectrum is computed densely
//! (a symmetric eigensolve for weighted self-adjoint operators, a general
//! eigensolve otherwise). Larger operators use block shift-invert subspace
//! iteration.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::cone::{cone_dominates, ConeTolerance, ConeVerdict};
use crate::error::{LabError, Result};
use crate::fit::log_log_fit;
use crate::grid::{GridFunction, GridSpace};
use crate::linalg::{general_eigenvalues, svd, symmetric_eigen, ShiftedSystem, SolverConfig};
use crate::operators::GridOperator;
use crate::random;

/// Eigenvalues closer than this (relative to the operator scale) count as equal.
const GAP_TOL: f64 = 1e-8;
/// Imaginary parts below this (relative to the scale) count as real.
const IMAG_TOL: f64 = 1e-8;
/// Eigen-residual bound relative to the operator scale.
const RESIDUAL_TOL: f64 = 1e-8;
/// Tied eigenvalues are only accurate to about the square root of machine precision.
const TIED_RESIDUAL_TOL: f64 = 1e-6;
/// Below this normalized pairing the dual and right eigenvectors are treated as orthogonal.
const PAIRING_TOL: f64 = 1e-6;
/// Largest side for which null vectors come from a dense SVD.
const SVD_CAP: usize = 1024;

#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub lambda0: f64,
    /// Right eigenvector, `‖v‖_∞ = 1`, sign fixed by `Σ w v ≥ 0`.
    pub v: GridFunction,
    /// Dual eigenvector, normalized by `⟨φ, v⟩_w = 1`.
    pub phi: GridFunction,
    /// Distance from `λ₀` to the next distinct real part.
    pub gap: f64,
    /// Number of eigenvalues tied with `λ₀` (algebraic count).
    pub multiplicity: usize,
    /// Largest `c` with `v ≥ c 1`.
    pub c_dom: f64,
    pub phi_min: f64,
    /// Next distinct real part below `λ₀`.
    pub lambda1: f64,
    /// Whether both inverse-iteration starts converged to the same ray.
    pub same_ray: bool,
    /// `⟨φ, v⟩_w / (‖φ‖_w ‖v‖_w)` before normalization; near zero for defective `λ₀`.
    pub pairing: f64,
    /// `‖A v - λ₀ v‖_∞`.
    pub residual: f64,
    /// Operator scale `‖A‖_∞` used for relative tolerances.
    pub scale: f64,
}

impl SpectralReport {
    /// Geometric simplicity certificate: a clear gap and a single limiting ray.
    pub fn is_simple(&self) -> bool {
        self.gap > GAP_TOL * self.scale && self.same_ray && self.pairing.abs() >= PAIRING_TOL
    }

    pub fn space(&self) -> &Arc<GridSpace> {
        self.v.space()
    }
}

fn operator_scale(op: &GridOperator) -> f64 {
    let s = op.matrix().norm_inf();
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Raw spectral data before vectors are normalized.
struct Leading {
    lambda0: f64,
    /// Largest real part strictly below `lambda0` (beyond the tie tolerance).
    lambda1: f64,
    /// Eigenvalues tied with `lambda0`.
    multiplicity: usize,
    v: Option<DVector<f64>>,
    /// Left null vector of `A - λ₀` (unweighted), when already known.
    psi: Option<DVector<f64>>,
}

/// Splits sorted-descending real parts into (top, next distinct, tie count).
fn split_top(sorted: &[f64], scale: f64) -> (f64, f64, usize) {
    let top = sorted[0];
    let ties = sorted.iter().take_while(|x| top - **x <= GAP_TOL * scale).count();
    (top, sorted.get(ties).copied().unwrap_or(f64::NEG_INFINITY), ties)
}

fn dense_self_adjoint(op: &GridOperator) -> Result<Leading> {
    let w = &op.space().weights;
    let sq: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let n = op.side();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for (i, j, a) in op.matrix().triplets() {
        s[(i, j)] += 0.5 * sq[i] * a / sq[j];
        s[(j, i)] += 0.5 * sq[i] * a / sq[j];
    }
    let (vals, vecs) = symmetric_eigen(&s)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| vals[*b].total_cmp(&vals[*a]));
    let q = vecs.column(order[0]);
    let v = DVector::from_iterator(n, q.iter().zip(&sq).map(|(x, s)| x / s));
    let sorted: Vec<f64> = order.iter().map(|&k| vals[k]).collect();
    let (lambda0, lambda1, multiplicity) = split_top(&sorted, operator_scale(op));
    Ok(Leading {
        lambda0,
        lambda1,
        multiplicity,
        v: Some(v),
        psi: None,
    })
}

fn leading_of_complex(mut ev: Vec<(f64, f64)>, scale: f64) -> Result<(f64, f64, usize)> {
    ev.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = ev[0].0;
    // among eigenvalues sharing the maximal real part, a non-real one breaks the assumption
    if let Some(&(re, im)) = ev
        .iter()
        .take_while(|(re, _)| top - re <= IMAG_TOL * scale)
        .find(|(_, im)| im.abs() > IMAG_TOL * scale)
    {
        return Err(LabError::NoRealSpectralBound { re, im });
    }
    let re: Vec<f64> = ev.iter().map(|e| e.0).collect();
    Ok(split_top(&re, scale))
}

fn dense_general(op: &GridOperator, scale: f64) -> Result<Leading> {
    let a = op.matrix().to_dense();
    let ev = general_eigenvalues(&a)?;
    let (lambda0, lambda1, multiplicity) = leading_of_complex(ev, scale)?;
    let n = a.nrows();
    if n > SVD_CAP {
        return Ok(Leading {
            lambda0,
            lambda1,
            multiplicity,
            v: None,
            psi: None,
        });
    }
    // null vectors of A - λ₀ from the smallest singular triplets
    let shifted = a - DMatrix::identity(n, n) * lambda0;
    let (u, sv, right) = svd(&shifted)?;
    let v = right.column(n - 1).into_owned();
    let null_dim = sv.iter().filter(|s| **s <= 1e-10 * scale).count().max(1);
    // within a multi-dimensional left null space, take the part aligned with v
    let mut psi = DVector::zeros(n);
    for k in n - null_dim..n {
        let col = u.column(k);
        psi.axpy(if null_dim == 1 { 1.0 } else { col.dot(&v) }, &col, 1.0);
    }
    Ok(Leading {
        lambda0,
        lambda1,
        multiplicity,
        v: Some(v),
        psi: Some(psi),
    })
}

/// Orthonormalizes the columns of `x` in the pairing `Σ w a b` (modified Gram–Schmidt, twice).
fn orthonormalize(x: &mut DMatrix<f64>, w: &[f64]) {
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(w).map(|((p, q), r)| p * q * r).sum() };
    for _ in 0..2 {
        for c in 0..x.ncols() {
            for k in 0..c {
                let (prev, cur) = (x.column(k).into_owned(), x.column(c).into_owned());
                let proj = dot(prev.as_slice(), cur.as_slice());
                x.column_mut(c).axpy(-proj, &prev, 1.0);
            }
            let norm = dot(x.column(c).as_slice(), x.column(c).as_slice()).sqrt();
            if norm > 0.0 {
                x.column_mut(c).scale_mut(1.0 / norm);
            }
        }
    }
}

fn subspace_iteration(op: &GridOperator, scale: f64, cfg: &SolverConfig) -> Result<Leading> {
    const BLOCK: usize = 6;
    const MAX_SWEEPS: usize = 500;
    let n = op.side();
    let b = BLOCK.min(n);
    let sigma = op.matrix().gershgorin_upper() + 1.0;
    let sa = op.is_self_adjoint();
    let w = &op.space().weights;
    let unit = vec![1.0; n];
    let ip = if sa { w.as_slice() } else { unit.as_slice() };
    let sys = ShiftedSystem::new(op.matrix(), sigma, w, sa, cfg)?;
    let mut rng = random::rng(0x5eed_0b1c);
    let mut x = DMatrix::from_fn(n, b, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
    // the constant direction is the Perron candidate for Metzler operators
    x.set_column(0, &DVector::from_element(n, 1.0));
    orthonormalize(&mut x, ip);
    let mut prev = (f64::NAN, f64::NAN);
    for sweep in 0..MAX_SWEEPS {
        x = sys.solve_matrix(&x)?;
        orthonormalize(&mut x, ip);
        let ax = op.matrix().mul_dense(&x);
        let mut h = DMatrix::<f64>::zeros(b, b);
        for i in 0..b {
            for j in 0..b {
                h[(i, j)] = x.column(i).iter().zip(ax.column(j).iter()).zip(ip).map(|((p, q), r)| p * q * r).sum();
            }
        }
        let (l0, l1, mult, ritz) = if sa {
            let hs = (&h + h.transpose()) * 0.5;
            let eig = hs.symmetric_eigen();
            let mut order: Vec<usize> = (0..b).collect();
            order.sort_by(|p, q| eig.eigenvalues[*q].total_cmp(&eig.eigenvalues[*p]));
            let y = eig.eigenvectors.column(order[0]).into_owned();
            let sorted: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
            let (l0, l1, mult) = split_top(&sorted, scale);
            (l0, l1, mult, Some(&x * y))
        } else {
            let (l0, l1, mult) = leading_of_complex(general_eigenvalues(&h)?, scale)?;
            (l0, l1, mult, None)
        };
        let settled = (l0 - prev.0).abs() <= 1e-13 * scale && (l1 - prev.1).abs() <= 1e-11 * scale;
        prev = (l0, l1);
        if settled && sweep > 2 {
            return Ok(Leading {
                lambda0: l0,
                lambda1: l1,
                multiplicity: mult,
                v: ritz,
                psi: None,
            });
        }
    }
    Err(LabError::Solver {
        iterations: MAX_SWEEPS,
        residual: f64::NAN,
    })
}

/// Inverse iteration with a fixed shift from `start`; returns the ∞-normalized limit.
fn inverse_iteration(sys: &ShiftedSystem, start: DVector<f64>) -> Result<DVector<f64>> {
    let normalize = |x: DVector<f64>| {
        let k = x.iamax();
        let s = x[k];
        x / s
    };
    let mut x = normalize(start);
    for _ in 0..200 {
        let next = normalize(sys.solve(&x)?);
        let change = (&next - &x).amax();
        x = next;
        if change <= 1e-13 {
            break;
        }
    }
    Ok(x)
}

fn weighted_cos(a: &DVector<f64>, b: &DVector<f64>, w: &[f64]) -> f64 {
    let dot = |p: &DVector<f64>, q: &DVector<f64>| -> f64 { p.iter().zip(q.iter()).zip(w).map(|((x, y), r)| x * y * r).sum() };
    dot(a, b).abs() / (dot(a, a) * dot(b, b)).sqrt()
}

fn oriented(mut v: DVector<f64>, w: &[f64]) -> DVector<f64> {
    let amax = v.amax();
    if amax > 0.0 {
        v /= amax;
    }
    let sum: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
    if sum < 0.0 || (sum == 0.0 && v[v.iamax()] < 0.0) {
        v = -v;
    }
    v
}

/// Leading eigenvalue, eigenvector and dual eigenvector of `op`.
pub fn leading_eigenpair(op: &GridOperator, cfg: &SolverConfig) -> Result<SpectralReport> {
    let n = op.side();
    let scale = operator_scale(op);
    let w = op.space().weights.clone();
    let lead = if n <= cfg.eig_dense_cap {
        if op.is_self_adjoint() {
            dense_self_adjoint(op)?
        } else {
            dense_general(op, scale)?
        }
    } else {
        subspace_iteration(op, scale, cfg)?
    };
    let gap = lead.lambda0 - lead.lambda1;
    let clear_gap = gap > GAP_TOL * scale;
    // a defective λ₀ splits into a cluster of width about √ε, so widen the shift until it factors
    let first = if clear_gap {
        (0.05 * gap.min(scale.max(1.0))).max(1e-9 * scale)
    } else {
        1e-9 * scale
    };
    let etas = [first, first.max(1e-7 * scale), first.max(1e-5 * scale)];
    let mut shifted = Err(LabError::domain("no shift tried"));
    for &eta in &etas {
        shifted = ShiftedSystem::new(op.matrix(), lead.lambda0 + eta, &w, op.is_self_adjoint(), cfg).map(|s| (s, lead.lambda0 + eta));
        if !matches!(shifted, Err(LabError::InSpectrum { .. })) {
            break;
        }
    }
    let (sys, sigma) = shifted?;
    let mut rng = random::rng(0x5eed_0001);
    let mut same_ray = false;
    let mut v = lead.v;
    if clear_gap {
        let a = inverse_iteration(&sys, random::gaussian_vector(&mut rng, n))?;
        let b = inverse_iteration(&sys, random::gaussian_vector(&mut rng, n))?;
        same_ray = weighted_cos(&a, &b, &w) >= 1.0 - 1e-8;
        if v.is_none() {
            v = Some(inverse_iteration(&sys, a)?);
        }
    }
    let v = match v {
        Some(v) => v,
        None => inverse_iteration(&sys, DVector::from_element(n, 1.0))?,
    };
    let v = oriented(v, &w);
    let av = op.matrix().mul_vec(&v);

    let wdot = |p: &DVector<f64>, q: &DVector<f64>| -> f64 { p.iter().zip(q.iter()).zip(&w).map(|((a, b), c)| a * b * c).sum() };
    let phi = if op.is_self_adjoint() {
        v.clone()
    } else {
        match lead.psi {
            Some(psi) => DVector::from_iterator(n, psi.iter().zip(&w).map(|(p, w)| p / w)),
            None => {
                let adj = op.weighted_adjoint()?;
                let adj_sys = ShiftedSystem::new(adj.matrix(), sigma, &w, false, cfg)?;
                inverse_iteration(&adj_sys, v.clone())?
            }
        }
    };
    let pv = wdot(&phi, &v);
    let pairing = pv / (wdot(&phi, &phi) * wdot(&v, &v)).sqrt();
    if !pairing.is_finite() {
        return Err(LabError::Solver {
            iterations: 0,
            residual: f64::NAN,
        });
    }
    // a vanishing pairing means λ₀ is not algebraically simple: keep the raw λ₀
    // and scale φ to unit sup norm instead of ⟨φ, v⟩ = 1
    let degenerate = pairing.abs() < PAIRING_TOL;
    let lambda0 = if degenerate { lead.lambda0 } else { wdot(&phi, &av) / pv };
    let phi = if degenerate { oriented(phi, &w) } else { phi / pv };
    let residual = (&av - &v * lambda0).amax();
    let allowed = if lead.multiplicity > 1 { TIED_RESIDUAL_TOL } else { RESIDUAL_TOL };
    if residual > allowed * scale {
        return Err(LabError::Solver {
            iterations: 200,
            residual: residual / scale,
        });
    }
    let space = op.space().clone();
    let c_dom = v.min();
    let phi_min = phi.min();
    Ok(SpectralReport {
        lambda0,
        v: GridFunction::from_parts(space.clone(), v),
        phi: GridFunction::from_parts(space, phi),
        gap: lambda0 - lead.lambda1,
        multiplicity: lead.multiplicity,
        c_dom,
        phi_min,
        lambda1: lead.lambda1,
        same_ray,
        pairing,
        residual,
        scale,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionVerdict {
    pub simple: bool,
    pub v_dominates_u: ConeVerdict,
    pub c_dom: f64,
    pub phi_strictly_positive: ConeVerdict,
    pub overall: bool,
}

/// Evaluates the spectral assumption from an existing report.
pub fn assumption_from_report(report: &SpectralReport, u: &GridFunction, tol: &ConeTolerance) -> Result<AssumptionVerdict> {
    let (v_dom, c_dom) = cone_dominates(&report.v, u, tol)?;
    let ones = report.space().ones();
    let (phi_pos, _) = cone_dominates(&report.phi, &ones, tol)?;
    let simple = report.is_simple();
    Ok(AssumptionVerdict {
        simple,
        overall: simple && v_dom.holds && phi_pos.holds,
        v_dominates_u: v_dom,
        c_dom,
        phi_strictly_positive: phi_pos,
    })
}

pub fn check_spectral_assumption(
    op: &GridOperator,
    u: &GridFunction,
    tol: &ConeTolerance,
    cfg: &SolverConfig,
) -> Result<(SpectralReport, AssumptionVerdict)> {
    let report = leading_eigenpair(op, cfg)?;
    let verdict = assumption_from_report(&report, u, tol)?;
    Ok((report, verdict))
}

#[derive(Clone, Debug, Serialize)]
pub struct DominationRung {
    pub n: usize,
    pub h: f64,
    pub lambda0: f64,
    pub c_dom: f64,
    pub phi_min: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DominationFit {
    pub rungs: Vec<DominationRung>,
    /// Exponent of `c_dom ~ h^α`; infinite when some rung has `c_dom ≤ 0`.
    pub alpha: f64,
    pub alpha_residual: f64,
    /// Exponent of `phi_min ~ h^β`, when every `phi_min` is positive.
    pub phi_alpha: Option<f64>,
}

impl DominationFit {
    /// `|α| ≤ tol`: the eigenvector stays uniformly above `u` under refinement.
    pub fn is_robust(&self, tol: f64) -> bool {
        self.alpha.abs() <= tol
    }
}

/// Fits the decay of `c_dom` (against `u_rule`) along a mesh ladder.
pub fn mesh_robust_domination(
    build: impl Fn(usize) -> Result<GridOperator> + Sync,
    ladder: &[usize],
    u_rule: impl Fn(&Arc<GridSpace>) -> GridFunction + Sync,
    cfg: &SolverConfig,
) -> Result<DominationFit> {
    if ladder.len() < 3 {
        return Err(LabError::domain(format!("mesh ladder needs at least 3 rungs, got {}", ladder.len())));
    }
    let rungs: Vec<DominationRung> = ladder
        .par_iter()
        .map(|&n| {
            let op = build(n)?;
            let report = leading_eigenpair(&op, cfg)?;
            let u = u_rule(op.space());
            let (_, c_dom) = cone_dominates(&report.v, &u, &ConeTolerance::default())?;
            Ok(DominationRung {
                n,
                h: op.space().h,
                lambda0: report.lambda0,
                c_dom,
                phi_min: report.phi_min,
            })
        })
        .collect::<Result<_>>()?;
    let hs: Vec<f64> = rungs.iter().map(|r| r.h).collect();
    let cs: Vec<f64> = rungs.iter().map(|r| r.c_dom).collect();
    let (alpha, alpha_residual) = if cs.iter().all(|c| *c > 0.0) {
        let fit = log_log_fit(&hs, &cs)?;
        (fit.slope, fit.residual)
    } else {
        (f64::INFINITY, f64::NAN)
    };
    let ps: Vec<f64> = rungs.iter().map(|r| r.phi_min).collect();
    let phi_alpha = if ps.iter().all(|p| *p > 0.0) {
        Some(log_log_fit(&hs, &ps)?.slope)
    } else {
        None
    };
    Ok(DominationFit {
        rungs,
        alpha,
        alpha_residual,
        phi_alpha,
    })
}

/// The spectral projection `P f = ⟨φ, f⟩_w v`.
#[derive(Clone, Debug)]
pub struct SpectralProjection {
    v: GridFunction,
    phi: GridFunction,
}

pub fn spectral_projection(report: &SpectralReport) -> Result<SpectralProjection> {
    let pv = report.phi.pairing(&report.v);
    if (pv - 1.0).abs() > 1e-8 {
        return Err(LabError::precondition(format!("⟨φ, v⟩ = {pv}, expected 1")));
    }
    Ok(SpectralProjection {
        v: report.v.clone(),
        phi: report.phi.clone(),
    })
}

impl SpectralProjection {
    pub fn apply(&self, f: &GridFunction) -> GridFunction {
        self.v.scaled(self.phi.pairing(f))
    }

    /// `v (W φ)^T` as an explicit matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let w = &self.v.space().weights;
        let wphi = DVector::from_iterator(w.len(), self.phi.as_slice().iter().zip(w).map(|(p, w)| p * w));
        self.v.values() * wphi.transpose()
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::operators::{build_coupled, build_laplacian, build_rank_one, BoundaryCondition, MatrixPotential};

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn rank_one_eigenpair() {
        let op = build_rank_one(64).unwrap();
        let r = leading_eigenpair(&op, &cfg()).unwrap();
        assert!(r.lambda0.abs() < 1e-12);
        assert!((r.gap - 1.0).abs() < 1e-10);
        assert!((r.v.values().add_scalar(-1.0)).amax() < 1e-10);
        assert!((r.phi.values().add_scalar(-1.0)).amax() < 1e-10);
        assert!(r.is_simple());
    }

    #[test]
    fn dirichlet_eigenvector_is_a_sine() {
        let op = build_laplacian(1, 99, BoundaryCondition::Dirichlet).unwrap();
        let r = leading_eigenpair(&op, &cfg()).unwrap();
        let h = 0.01;
        assert!((r.lambda0 + 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2)).abs() < 1e-10 * r.lambda0.abs());
        for i in 0..99 {
            let x = (i + 1) as f64 * h;
            assert!((r.v.as_slice()[i] - (PI * x).sin()).abs() < 1e-9);
        }
        assert!((r.c_dom - (PI * h).sin()).abs() < 1e-12);
        let u = op.space().ones();
        let verdict = assumption_from_report(&r, &u, &ConeTolerance::default()).unwrap();
        assert!(verdict.overall);
        assert!((verdict.c_dom - 0.031410759078128).abs() < 1e-12);
    }

    #[test]
    fn subspace_iteration_matches_dense() {
        let op = build_laplacian(1, 60, BoundaryCondition::robin(1.0)).unwrap();
        let dense = leading_eigenpair(&op, &cfg()).unwrap();
        let small = SolverConfig {
            eig_dense_cap: 10,
            ..cfg()
        };
        let iter = leading_eigenpair(&op, &small).unwrap();
        assert!((dense.lambda0 - iter.lambda0).abs() < 1e-10 * dense.scale);
        assert!((dense.gap - iter.gap).abs() < 1e-7 * dense.scale);
        assert!((dense.v.values() - iter.v.values()).amax() < 1e-8);
    }

    #[test]
    fn coupled_system_satisfies_assumption() {
        let pot = MatrixPotential::Constant(DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.5, -0.5]));
        let op = build_coupled(15, 1, 2, pot).unwrap();
        assert!(!op.is_self_adjoint());
        let (r, verdict) = check_spectral_assumption(&op, &op.space().ones(), &ConeTolerance::default(), &cfg()).unwrap();
        assert!(verdict.overall, "{verdict:?}");
        assert!(r.phi_min > 0.0);
        let small = SolverConfig {
            eig_dense_cap: 8,
            ..cfg()
        };
        let iter = leading_eigenpair(&op, &small).unwrap();
        assert!((iter.lambda0 - r.lambda0).abs() < 1e-9);
        assert!((iter.phi.values() - r.phi.values()).amax() < 1e-7);
    }

    #[test]
    fn double_eigenvalue_is_not_simple() {
        let b = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let mut m = DMatrix::zeros(4, 4);
        m.view_mut((0, 0), (2, 2)).copy_from(&b);
        m.view_mut((2, 2), (2, 2)).copy_from(&b);
        let op = GridOperator::custom(&m, "two blocks").unwrap();
        let r = leading_eigenpair(&op, &cfg()).unwrap();
        assert!(!r.is_simple());
    }

    #[test]
    fn defective_leading_eigenvalue_breaks_the_assumption() {
        // [[B, 0], [C, B]] with C >= 0: a Jordan chain at the Perron root of B
        let b = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let mut m = DMatrix::zeros(4, 4);
        m.view_mut((0, 0), (2, 2)).copy_from(&b);
        m.view_mut((2, 2), (2, 2)).copy_from(&b);
        m[(2, 0)] = 0.5;
        let op = GridOperator::custom(&m, "jordan").unwrap();
        let r = leading_eigenpair(&op, &cfg()).unwrap();
        assert_eq!(r.multiplicity, 2);
        assert!(r.residual < 1e-6);
        assert!(!r.is_simple());
        let verdict = assumption_from_report(&r, &op.space().ones(), &ConeTolerance::default()).unwrap();
        assert!(!verdict.overall);
    }

    #[test]
    fn rotation_has_no_real_bound() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let op = GridOperator::custom(&m, "rotation").unwrap();
        assert!(matches!(
            leading_eigenpair(&op, &cfg()),
            Err(LabError::NoRealSpectralBound { .. })
        ));
    }

    #[test]
    fn domination_ladders() {
        let ladder = [25, 50, 100, 200];
        let ones = |s: &Arc<GridSpace>| s.ones();
        let neu = mesh_robust_domination(|n| build_laplacian(1, n, BoundaryCondition::Neumann), &ladder, ones, &cfg()).unwrap();
        assert!(neu.alpha.abs() <= 0.05);
        let dir = mesh_robust_domination(|n| build_laplacian(1, n, BoundaryCondition::Dirichlet), &ladder, ones, &cfg()).unwrap();
        assert!((dir.alpha - 1.0).abs() <= 0.1, "{}", dir.alpha);
        let rob = mesh_robust_domination(|n| build_laplacian(1, n, BoundaryCondition::robin(1.0)), &ladder, ones, &cfg()).unwrap();
        assert!(rob.alpha.abs() <= 0.1);
        assert!(mesh_robust_domination(build_rank_one, &ladder[..2], ones, &cfg()).is_err());
    }

    #[test]
    fn projection_is_idempotent_and_commutes() {
        let op = build_laplacian(1, 30, BoundaryCondition::robin(0.5)).unwrap();
        let r = leading_eigenpair(&op, &cfg()).unwrap();
        let p = spectral_projection(&r).unwrap();
        let pm = p.to_dense();
        assert!((&pm * &pm - &pm).amax() < 1e-10);
        let a = op.matrix().to_dense();
        assert!((&a * &pm - &pm * r.lambda0).amax() < 1e-8 * r.scale);
        assert!((&pm * &a - &pm * r.lambda0).amax() < 1e-8 * r.scale);
    }
}
