//! Seeded generators for test inputs. Every sample is reproducible from its seed.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{LabError, Result};
use crate::grid::{GridFunction, GridSpace};

pub type LabRng = ChaCha8Rng;

pub fn rng(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector(rng: &mut LabRng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Non-negative field `g_i^2` with Gaussian `g`, plus a few zeroed entries so
/// that inputs are not accidentally strictly positive.
pub fn squared_gaussian(space: &Arc<GridSpace>, rng: &mut LabRng) -> GridFunction {
    let mut v = gaussian_vector(rng, space.len()).map(|g| g * g);
    for _ in 0..space.len() / 8 {
        let i = rng.random_range(0..space.len());
        v[i] = 0.0;
    }
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    GridFunction::from_parts(space.clone(), v)
}

/// Indicator of the closed ball of `radius` around `center`, scaled to unit `L^p` norm.
pub fn ball_bump(space: &Arc<GridSpace>, center: [f64; 3], radius: f64, p: f64) -> Result<GridFunction> {
    let f = GridFunction::from_fn(space, |_, x| {
        let r2: f64 = (0..space.dim).map(|a| (x[a] - center[a]).powi(2)).sum();
        if r2.sqrt() <= radius * (1.0 + 1e-12) {
            1.0
        } else {
            0.0
        }
    })?;
    let norm = crate::cone::lp_norm(&f, p)?;
    if norm == 0.0 {
        return Err(LabError::domain(format!(
            "bump of radius {radius} around {center:?} contains no grid node"
        )));
    }
    Ok(f.scaled(1.0 / norm))
}

/// Random irreducible Metzler matrix: a random cyclic permutation guarantees
/// strong connectivity, extra non-negative entries fill roughly `density` of
/// the off-diagonal, and the diagonal is arbitrary.
pub fn irreducible_metzler(rng: &mut LabRng, n: usize, density: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    if n == 1 {
        m[(0, 0)] = rng.random_range(-2.0..2.0);
        return m;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    for k in 0..n {
        let (a, b) = (perm[k], perm[(k + 1) % n]);
        m[(a, b)] = rng.random_range(0.2..1.0);
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < density {
                m[(i, j)] += rng.random_range(0.0..1.0);
            }
        }
        m[(i, i)] = rng.random_range(-3.0..1.0);
    }
    m
}

/// A uniformly random permutation matrix.
pub fn permutation(rng: &mut LabRng, n: usize) -> DMatrix<f64> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let mut p = DMatrix::zeros(n, n);
    for (i, &j) in perm.iter().enumerate() {
        p[(i, j)] = 1.0;
    }
    p
}
