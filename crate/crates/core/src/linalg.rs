//! Linear solves with shifted operators and matrix exponentials.
//!
//! `ShiftedSystem` factors `sigma I - A` once and applies the inverse with a
//! backward-error check. The factorization is picked from the sparsity:
//! a banded LU for finite-difference stencils in one and two dimensions, a
//! dense LU for small dense matrices, and preconditioned Krylov iterations
//! beyond the dense cap.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::sparse::CsrMatrix;

/// Knobs for the solver layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Largest side treated with explicit dense matrices (LU, exponentials, norms).
    pub dense_cap: usize,
    /// Largest side for which the full spectrum is computed densely.
    pub eig_dense_cap: usize,
    /// Relative residual target of the Krylov solvers.
    pub iter_tol: f64,
    pub max_iter: usize,
    /// Condition estimates above this mean "lambda in the numerical spectrum".
    pub cond_limit: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dense_cap: 4096,
            eig_dense_cap: 4096,
            iter_tol: 1e-13,
            max_iter: 20_000,
            cond_limit: 1e12,
        }
    }
}

/// Backward-error bound accepted for a computed solution of `M x = b`.
const RESIDUAL_FACTOR: f64 = 1e-10;

/// Banded LU with partial pivoting in LAPACK `gbtrf` storage.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
    singular: bool,
}

impl BandedLu {
    pub fn factor(m: &CsrMatrix) -> BandedLu {
        let n = m.nrows();
        let (kl, ku) = m.bandwidth();
        let ldab = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            ldab,
            ab: vec![0.0; ldab * n],
            ipiv: vec![0; n],
            singular: false,
        };
        for (i, j, v) in m.triplets() {
            let k = lu.idx(i, j);
            lu.ab[k] = v;
        }
        lu.decompose();
        lu
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ldab + (self.kl + self.ku + i - j)
    }

    fn decompose(&mut self) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = self.ab[self.idx(j, j)].abs();
            for r in 1..=km {
                let v = self.ab[self.idx(j + r, j)].abs();
                if v > best {
                    best = v;
                    jp = r;
                }
            }
            self.ipiv[j] = j + jp;
            if best == 0.0 {
                self.singular = true;
                continue;
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = self.idx(j, c);
                    let b = self.idx(j + jp, c);
                    self.ab.swap(a, b);
                }
            }
            if km > 0 {
                let piv = self.ab[self.idx(j, j)];
                for r in 1..=km {
                    let k = self.idx(j + r, j);
                    self.ab[k] /= piv;
                }
                for c in (j + 1)..=ju {
                    let top = self.ab[self.idx(j, c)];
                    if top == 0.0 {
                        continue;
                    }
                    for r in 1..=km {
                        let l = self.ab[self.idx(j + r, j)];
                        let k = self.idx(j + r, c);
                        self.ab[k] -= l * top;
                    }
                }
            }
        }
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl) = (self.n, self.kl);
        if kl > 0 {
            for j in 0..n.saturating_sub(1) {
                let lm = kl.min(n - 1 - j);
                let l = self.ipiv[j];
                if l != j {
                    b.swap(l, j);
                }
                let bj = b[j];
                if bj != 0.0 {
                    for r in 1..=lm {
                        b[j + r] -= self.ab[self.idx(j + r, j)] * bj;
                    }
                }
            }
        }
        let kband = self.kl + self.ku;
        for j in (0..n).rev() {
            b[j] /= self.ab[self.idx(j, j)];
            let bj = b[j];
            if bj != 0.0 {
                for i in j.saturating_sub(kband)..j {
                    b[i] -= self.ab[self.idx(i, j)] * bj;
                }
            }
        }
    }
}

enum Method {
    Dense(LU<f64, Dyn, Dyn>),
    Banded(BandedLu),
    /// Krylov iterations with a Jacobi preconditioner. `weights` is set when
    /// the operator is self-adjoint in the weighted inner product and
    /// conjugate gradients may be tried first.
    Krylov { inv_diag: Vec<f64>, weights: Option<Vec<f64>> },
}

/// Which factorization a [`ShiftedSystem`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMethod {
    Dense,
    Banded,
    Krylov,
}

/// `sigma I - A`, factored for repeated solves.
pub struct ShiftedSystem {
    sigma: f64,
    matrix: CsrMatrix,
    norm_inf: f64,
    method: Method,
    cfg: SolverConfig,
    condition: f64,
}

impl std::fmt::Debug for ShiftedSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShiftedSystem")
            .field("sigma", &self.sigma)
            .field("method", &self.method())
            .field("condition", &self.condition)
            .finish()
    }
}

impl ShiftedSystem {
    /// Factors `sigma I - a`. `weights` are the quadrature weights and
    /// `self_adjoint` says whether `diag(weights) a` is symmetric.
    pub fn new(a: &CsrMatrix, sigma: f64, weights: &[f64], self_adjoint: bool, cfg: &SolverConfig) -> Result<Self> {
        let matrix = a.shifted_negative(sigma);
        let n = matrix.nrows();
        let (kl, ku) = matrix.bandwidth();
        let band_mem = n * (2 * kl + ku + 1);
        let band_cost = (n * kl.max(1) * (kl + ku + 1)) as f64;
        let dense_cost = (n as f64).powi(3) / 12.0;
        let method = if band_mem <= 40_000_000 && (band_cost < dense_cost || n > cfg.dense_cap) {
            Method::Banded(BandedLu::factor(&matrix))
        } else if n <= cfg.dense_cap {
            Method::Dense(matrix.to_dense().lu())
        } else {
            let inv_diag = matrix
                .diagonal()
                .iter()
                .map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 })
                .collect();
            Method::Krylov {
                inv_diag,
                weights: self_adjoint.then(|| weights.to_vec()),
            }
        };
        let norm_inf = matrix.norm_inf();
        let mut sys = ShiftedSystem {
            sigma,
            matrix,
            norm_inf,
            method,
            cfg: *cfg,
            condition: 1.0,
        };
        sys.condition = sys.estimate_condition()?;
        if !(sys.condition <= cfg.cond_limit) {
            return Err(LabError::InSpectrum {
                lambda: sigma,
                condition: sys.condition,
            });
        }
        Ok(sys)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn method(&self) -> SolveMethod {
        match self.method {
            Method::Dense(_) => SolveMethod::Dense,
            Method::Banded(_) => SolveMethod::Banded,
            Method::Krylov { .. } => SolveMethod::Krylov,
        }
    }

    /// Lower estimate of the 1-norm condition number of `sigma I - A`.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    fn singular(&self) -> bool {
        match &self.method {
            Method::Dense(lu) => !lu.is_invertible(),
            Method::Banded(lu) => lu.is_singular(),
            Method::Krylov { .. } => false,
        }
    }

    fn estimate_condition(&self) -> Result<f64> {
        if self.singular() {
            return Ok(f64::INFINITY);
        }
        // Iterative solves are only used away from the spectrum; their
        // convergence check takes the place of a condition estimate.
        if matches!(self.method, Method::Krylov { .. }) {
            return Ok(1.0);
        }
        let n = self.matrix.nrows();
        let norm1 = self.matrix.norm_one();
        let mut best: f64 = 0.0;
        // deterministic sign patterns: alternating and a sine-modulated one
        for probe in 0..2 {
            let b = DVector::from_iterator(
                n,
                (0..n).map(|i| {
                    let s = if probe == 0 {
                        if i % 2 == 0 { 1.0 } else { -1.0 }
                    } else {
                        ((i as f64 * 1.618_033_988_749_895 + 0.3).sin()).signum()
                    };
                    if s == 0.0 { 1.0 } else { s }
                }),
            );
            let x = self.raw_solve(&b)?;
            let ratio = x.lp_norm(1) / b.lp_norm(1);
            if !ratio.is_finite() {
                return Ok(f64::INFINITY);
            }
            best = best.max(ratio);
        }
        Ok(norm1 * best)
    }

    fn raw_solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.method {
            Method::Dense(lu) => lu.solve(b).ok_or(LabError::InSpectrum {
                lambda: self.sigma,
                condition: f64::INFINITY,
            }),
            Method::Banded(lu) => {
                let mut x = b.clone();
                lu.solve_in_place(x.as_mut_slice());
                Ok(x)
            }
            Method::Krylov { inv_diag, weights } => {
                if let Some(w) = weights {
                    if let Some(x) = pcg_weighted(&self.matrix, b, w, inv_diag, &self.cfg) {
                        return Ok(x);
                    }
                }
                gmres(&self.matrix, b, inv_diag, &self.cfg)
            }
        }
    }

    fn acceptable(&self, r: &DVector<f64>, b: &DVector<f64>, x: &DVector<f64>) -> bool {
        r.amax() <= RESIDUAL_FACTOR * (b.amax() + self.norm_inf * x.amax())
    }

    /// Solves `(sigma I - A) x = b` with up to three refinement sweeps.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = self.raw_solve(b)?;
        for _ in 0..3 {
            let r = b - self.matrix.mul_vec(&x);
            if self.acceptable(&r, b, &x) {
                return Ok(x);
            }
            let dx = self.raw_solve(&r)?;
            x += dx;
        }
        let r = b - self.matrix.mul_vec(&x);
        if self.acceptable(&r, b, &x) {
            Ok(x)
        } else {
            Err(LabError::Solver {
                iterations: 3,
                residual: r.amax() / (b.amax() + self.norm_inf * x.amax()),
            })
        }
    }

    /// Column-by-column solve.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let cols: Vec<DVector<f64>> = (0..b.ncols())
            .into_par_iter()
            .map(|c| self.solve(&b.column(c).into_owned()))
            .collect::<Result<_>>()?;
        if cols.is_empty() {
            return Ok(DMatrix::zeros(b.nrows(), 0));
        }
        Ok(DMatrix::from_columns(&cols))
    }
}

/// Preconditioned conjugate gradients in the inner product `<x, y>_w`.
/// Returns `None` on breakdown (indefinite operator) or non-convergence.
fn pcg_weighted(m: &CsrMatrix, b: &DVector<f64>, w: &[f64], inv_diag: &[f64], cfg: &SolverConfig) -> Option<DVector<f64>> {
    let dot = |x: &DVector<f64>, y: &DVector<f64>| -> f64 { x.iter().zip(y.iter()).zip(w).map(|((a, b), w)| a * b * w).sum() };
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Some(DVector::zeros(n));
    }
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut z = DVector::from_iterator(n, r.iter().zip(inv_diag).map(|(a, d)| a * d));
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = DVector::zeros(n);
    for _ in 0..cfg.max_iter {
        m.mul_vec_into(p.as_slice(), ap.as_mut_slice());
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return None;
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        if dot(&r, &r).sqrt() <= cfg.iter_tol * bnorm {
            return Some(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    None
}

/// Restarted GMRES with right Jacobi preconditioning.
fn gmres(m: &CsrMatrix, b: &DVector<f64>, inv_diag: &[f64], cfg: &SolverConfig) -> Result<DVector<f64>> {
    const RESTART: usize = 60;
    let n = b.len();
    let bnorm = b.norm();
    let mut x = DVector::zeros(n);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let precond = |v: &DVector<f64>| DVector::from_iterator(n, v.iter().zip(inv_diag).map(|(a, d)| a * d));
    let mut total = 0;
    let mut resid = 1.0;
    while total < cfg.max_iter {
        let r = b - m.mul_vec(&x);
        let beta = r.norm();
        resid = beta / bnorm;
        if resid <= cfg.iter_tol {
            return Ok(x);
        }
        let mut basis: Vec<DVector<f64>> = vec![r / beta];
        let mut hess = DMatrix::<f64>::zeros(RESTART + 1, RESTART);
        let mut cs = vec![0.0; RESTART];
        let mut sn = vec![0.0; RESTART];
        let mut g = DVector::<f64>::zeros(RESTART + 1);
        g[0] = beta;
        let mut k_done = 0;
        for k in 0..RESTART {
            total += 1;
            let mut wv = m.mul_vec(&precond(&basis[k]));
            for (i, q) in basis.iter().enumerate() {
                let hik = wv.dot(q);
                hess[(i, k)] = hik;
                wv.axpy(-hik, q, 1.0);
            }
            let hn = wv.norm();
            hess[(k + 1, k)] = hn;
            for i in 0..k {
                let t = cs[i] * hess[(i, k)] + sn[i] * hess[(i + 1, k)];
                hess[(i + 1, k)] = -sn[i] * hess[(i, k)] + cs[i] * hess[(i + 1, k)];
                hess[(i, k)] = t;
            }
            let denom = hess[(k, k)].hypot(hess[(k + 1, k)]);
            if denom == 0.0 {
                k_done = k;
                break;
            }
            cs[k] = hess[(k, k)] / denom;
            sn[k] = hess[(k + 1, k)] / denom;
            hess[(k, k)] = denom;
            hess[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_done = k + 1;
            resid = g[k + 1].abs() / bnorm;
            if resid <= cfg.iter_tol || hn == 0.0 {
                break;
            }
            basis.push(wv / hn);
        }
        let mut y = DVector::<f64>::zeros(k_done);
        for i in (0..k_done).rev() {
            let mut s = g[i];
            for j in (i + 1)..k_done {
                s -= hess[(i, j)] * y[j];
            }
            y[i] = s / hess[(i, i)];
        }
        let mut update = DVector::zeros(n);
        for (j, q) in basis.iter().take(k_done).enumerate() {
            update.axpy(y[j], q, 1.0);
        }
        x += precond(&update);
        if k_done == 0 {
            break;
        }
    }
    let r = b - m.mul_vec(&x);
    resid = resid.max(r.norm() / bnorm);
    if r.norm() / bnorm <= cfg.iter_tol * 10.0 {
        return Ok(x);
    }
    Err(LabError::Solver {
        iterations: total,
        residual: resid,
    })
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Eigenvalues `(re, im)` of a general dense matrix.
pub fn general_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let ev = to_faer(m).eigenvalues().map_err(|_| LabError::Solver {
        iterations: 0,
        residual: f64::NAN,
    })?;
    Ok(ev.iter().map(|z| (z.re, z.im)).collect())
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = to_faer(m).self_adjoint_eigen(faer::Side::Lower).map_err(|_| LabError::Solver {
        iterations: 0,
        residual: f64::NAN,
    })?;
    let (u, s) = (eig.U(), eig.S());
    let n = m.nrows();
    let vals: Vec<f64> = (0..n).map(|i| s[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    Ok((vals, vecs))
}

/// Thin SVD `m = U diag(s) V^T` with singular values in decreasing order.
pub fn svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let dec = to_faer(m).svd().map_err(|_| LabError::Rank("singular value decomposition failed".into()))?;
    let (u, s, v) = (dec.U(), dec.S(), dec.V());
    let k = m.nrows().min(m.ncols());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| s[*b].total_cmp(&s[*a]));
    let um = DMatrix::from_fn(m.nrows(), k, |i, j| u[(i, order[j])]);
    let vm = DMatrix::from_fn(m.ncols(), k, |i, j| v[(i, order[j])]);
    Ok((um, order.iter().map(|&j| s[j]).collect(), vm))
}

/// Singular values in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut sv = to_faer(m).singular_values().map_err(|_| LabError::Rank("singular value decomposition failed".into()))?;
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Taylor polynomial of `exp(tau A)` applied to `x0` until the terms vanish.
fn taylor_block(a: &CsrMatrix, tau: f64, x0: &DMatrix<f64>) -> DMatrix<f64> {
    let mut sum = x0.clone();
    let mut term = x0.clone();
    for k in 1..=60 {
        term = a.mul_dense(&term) * (tau / k as f64);
        sum += &term;
        if term.amax() <= 1e-18 * sum.amax() {
            break;
        }
    }
    sum
}

fn check_finite(m: &DMatrix<f64>, t: f64) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LabError::domain(format!(
            "matrix exponential overflowed at t = {t}; rescale the operator or shorten t"
        )))
    }
}

/// `exp(t A)` as a dense matrix by scaling and squaring a Taylor polynomial.
pub fn expm_dense(a: &CsrMatrix, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) {
        return Err(LabError::domain(format!("exponential needs t >= 0, got {t}")));
    }
    let n = a.nrows();
    if t == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let norm = t * a.norm_one();
    let squarings = if norm > 2.0 { (norm / 2.0).log2().ceil() as u32 } else { 0 };
    let tau = t / 2f64.powi(squarings as i32);
    let mut e = taylor_block(a, tau, &DMatrix::identity(n, n));
    for _ in 0..squarings {
        e = &e * &e;
    }
    check_finite(&e, t)?;
    Ok(e)
}

/// Dense exponentials on an increasing ladder of times. Consecutive times
/// whose ratio is a power of two are reached by squaring; others by one
/// extra exponential and a product.
pub fn expm_ladder(a: &CsrMatrix, times: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        if i > 0 && !(t > times[i - 1]) {
            return Err(LabError::domain("exponential ladder must be strictly increasing"));
        }
        let next = match out.last() {
            Some(prev) => {
                let ratio = t / times[i - 1];
                let k = ratio.log2().round();
                if k >= 1.0 && (ratio - 2f64.powi(k as i32)).abs() <= 1e-12 * ratio {
                    let mut e = prev.clone();
                    for _ in 0..k as u32 {
                        e = &e * &e;
                    }
                    e
                } else {
                    expm_dense(a, t - times[i - 1])? * prev
                }
            }
            None => expm_dense(a, t)?,
        };
        check_finite(&next, t)?;
        out.push(next);
    }
    Ok(out)
}

/// `exp(t A) x` by substepped Taylor series; never forms a dense matrix.
pub fn expm_action(a: &CsrMatrix, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    if !(t >= 0.0) {
        return Err(LabError::domain(format!("exponential needs t >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(x.clone());
    }
    let norm = t * a.norm_one();
    let steps = norm.ceil().max(1.0) as usize;
    let tau = t / steps as f64;
    let mut v = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
    for _ in 0..steps {
        v = taylor_block(a, tau, &v);
    }
    check_finite(&v, t)?;
    Ok(DVector::from_column_slice(v.as_slice()))
}
