//! Tolerance-aware cone arithmetic on grid functions.
//!
//! The exact lattice relations `f >= 0` and `f ⪰ u` become verdicts with a
//! signed, normalized margin so that callers can watch a relation degenerate
//! under mesh refinement instead of only seeing a boolean flip.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::GridFunction;

/// Slack used when deciding cone relations numerically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConeTolerance {
    /// Relative slack, multiplied by the caller's scale.
    pub rel: f64,
    /// Absolute slack in the units of the values.
    pub abs: f64,
}

impl ConeTolerance {
    pub fn new(rel: f64, abs: f64) -> Result<Self> {
        if !(rel >= 0.0 && abs >= 0.0) || (rel == 0.0 && abs == 0.0) {
            return Err(LabError::domain(format!(
                "cone tolerance needs rel >= 0, abs >= 0, not both zero (got rel={rel}, abs={abs})"
            )));
        }
        Ok(ConeTolerance { rel, abs })
    }

    pub fn relative(rel: f64) -> Result<Self> {
        ConeTolerance::new(rel, 0.0)
    }

    /// Threshold `rel * scale + abs`.
    pub fn threshold(&self, scale: f64) -> f64 {
        self.rel * scale + self.abs
    }
}

impl Default for ConeTolerance {
    fn default() -> Self {
        ConeTolerance { rel: 1e-10, abs: 0.0 }
    }
}

/// Outcome of a cone test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeVerdict {
    pub holds: bool,
    /// Worst-case slack divided by the scale of the test.
    pub margin: f64,
    /// Entry attaining the margin (`None` for empty vectors).
    pub witness_index: Option<usize>,
}

fn require_strictly_positive(u: &GridFunction) -> Result<()> {
    match u.as_slice().iter().position(|&x| !(x > 0.0)) {
        Some(i) => Err(LabError::domain(format!(
            "reference function must be strictly positive; entry {i} is {}",
            u.as_slice()[i]
        ))),
        None => Ok(()),
    }
}

fn check_same_length(f: &GridFunction, u: &GridFunction) -> Result<()> {
    if f.len() != u.len() {
        return Err(LabError::validation(format!(
            "length mismatch: {} vs {}",
            f.len(),
            u.len()
        )));
    }
    Ok(())
}

/// Gauge norm `||f||_u = max_i |f_i| / u_i`.
pub fn gauge_norm(f: &GridFunction, u: &GridFunction) -> Result<f64> {
    check_same_length(f, u)?;
    require_strictly_positive(u)?;
    Ok(f.as_slice()
        .iter()
        .zip(u.as_slice())
        .map(|(a, b)| a.abs() / b)
        .fold(0.0, f64::max))
}

/// Tests `f >= 0` with slack `tol.rel * scale + tol.abs`.
pub fn cone_nonneg(f: &GridFunction, tol: &ConeTolerance, scale: f64) -> ConeVerdict {
    let Some((idx, min)) = f
        .as_slice()
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
    else {
        return ConeVerdict {
            holds: true,
            margin: 0.0,
            witness_index: None,
        };
    };
    let margin = if scale > 0.0 { min / scale } else { min };
    ConeVerdict {
        holds: min >= -tol.threshold(scale),
        margin,
        witness_index: Some(idx),
    }
}

/// [`cone_nonneg`] with the default scale `||f||_inf`.
pub fn cone_nonneg_auto(f: &GridFunction, tol: &ConeTolerance) -> ConeVerdict {
    cone_nonneg(f, tol, f.sup_norm())
}

/// Tests `f ⪰ u`: returns the verdict and `c = min_i f_i / u_i`, the largest
/// constant with `f >= c u`.
///
/// The relation is strict: it holds only when `c` exceeds
/// `tol.rel * ||f||_u + tol.abs`. The margin is `c / ||f||_u`.
pub fn cone_dominates(f: &GridFunction, u: &GridFunction, tol: &ConeTolerance) -> Result<(ConeVerdict, f64)> {
    check_same_length(f, u)?;
    require_strictly_positive(u)?;
    let mut best: Option<(usize, f64)> = None;
    let mut scale: f64 = 0.0;
    for (i, (a, b)) in f.as_slice().iter().zip(u.as_slice()).enumerate() {
        let r = a / b;
        scale = scale.max(r.abs());
        if best.is_none_or(|(_, c)| r < c) {
            best = Some((i, r));
        }
    }
    let Some((idx, c)) = best else {
        return Ok((
            ConeVerdict {
                holds: false,
                margin: 0.0,
                witness_index: None,
            },
            0.0,
        ));
    };
    let margin = if scale > 0.0 { c / scale } else { 0.0 };
    Ok((
        ConeVerdict {
            holds: c > tol.threshold(scale),
            margin,
            witness_index: Some(idx),
        },
        c,
    ))
}

/// Weighted `L^p` norm; `p = f64::INFINITY` selects the maximum norm.
pub fn lp_norm(f: &GridFunction, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(LabError::domain(format!("L^p norm needs p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(f.sup_norm());
    }
    let w = &f.space().weights;
    let sum: f64 = f.as_slice().iter().zip(w).map(|(x, w)| w * x.abs().powf(p)).sum();
    Ok(sum.powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::grid::GridSpace;

    fn space(n: usize) -> Arc<GridSpace> {
        Arc::new(GridSpace::cells(n).unwrap())
    }

    fn gf(s: &Arc<GridSpace>, v: &[f64]) -> GridFunction {
        GridFunction::from_slice(s, v).unwrap()
    }

    #[test]
    fn gauge_norm_examples() {
        let s = space(3);
        assert_eq!(gauge_norm(&gf(&s, &[1.0, -2.0, 3.0]), &s.ones()).unwrap(), 3.0);
        let u = gf(&s, &[0.5, 2.0, 7.0]);
        assert!((gauge_norm(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert!(gauge_norm(&u, &gf(&s, &[1.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn gauge_norm_of_sine_on_interior_grid() {
        // nine interior nodes of (0,1) at h = 0.1
        let s = space(9);
        let f = GridFunction::from_fn(&s, |i, _| (std::f64::consts::PI * 0.1 * (i + 1) as f64).sin()).unwrap();
        assert!((gauge_norm(&f, &s.ones()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nonneg_examples() {
        let s = space(3);
        let tol = ConeTolerance::relative(1e-10).unwrap();
        let v = cone_nonneg(&gf(&s, &[0.0, 0.0, 0.0]), &tol, 0.0);
        assert!(v.holds);
        assert_eq!(v.margin, 0.0);
        assert!(cone_nonneg(&gf(&s, &[1.0, -1e-14, 2.0]), &tol, 2.0).holds);
        let v = cone_nonneg(&gf(&s, &[1.0, -0.5, 2.0]), &tol, 2.0);
        assert!(!v.holds);
        assert_eq!(v.witness_index, Some(1));
        let empty = Arc::new(GridSpace {
            dim: 1,
            n_axis: 0,
            h: 1.0,
            coords: vec![],
            weights: vec![],
            boundary_nodes: vec![],
            components: 1,
        });
        let v = cone_nonneg(&GridFunction::constant(&empty, 0.0), &tol, 1.0);
        assert!(v.holds);
        assert_eq!(v.witness_index, None);
    }

    #[test]
    fn dominates_examples() {
        let s = space(5);
        let tol = ConeTolerance::default();
        let u = gf(&s, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let (v, c) = cone_dominates(&u, &u, &tol).unwrap();
        assert!(v.holds);
        assert!((c - 1.0).abs() < 1e-15);
        let (v, c) = cone_dominates(&s.ones(), &s.ones(), &tol).unwrap();
        assert!(v.holds && c == 1.0);
    }

    #[test]
    fn dominates_dirichlet_ground_state() {
        // interior nodes x_i = i h, h = 1/(n+1), n = 99
        let n = 99;
        let h = 1.0 / (n + 1) as f64;
        let s = space(n);
        let f = GridFunction::from_fn(&s, |i, _| (std::f64::consts::PI * h * (i + 1) as f64).sin()).unwrap();
        let (v, c) = cone_dominates(&f, &s.ones(), &ConeTolerance::default()).unwrap();
        assert!(v.holds);
        assert!((c - 0.031410759078128).abs() < 1e-12, "c = {c}");
    }

    #[test]
    fn borderline_domination_fails_with_margin() {
        let s = space(3);
        let (v, c) = cone_dominates(&gf(&s, &[0.0, 1.0, 2.0]), &s.ones(), &ConeTolerance::default()).unwrap();
        assert!(!v.holds);
        assert_eq!(c, 0.0);
        assert_eq!(v.witness_index, Some(0));
    }

    #[test]
    fn lp_norm_examples() {
        let s = space(10);
        assert!((lp_norm(&s.ones(), 2.0).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(lp_norm(&s.ones(), f64::INFINITY).unwrap(), 1.0);
        let half = GridFunction::from_fn(&s, |i, _| if i < 5 { 1.0 } else { 0.0 }).unwrap();
        assert!((lp_norm(&half, 1.0).unwrap() - 0.5).abs() < 1e-14);
        assert!(lp_norm(&half, 0.5).is_err());
    }

    #[test]
    fn tolerance_rejects_zero_slack() {
        assert!(ConeTolerance::new(0.0, 0.0).is_err());
        assert!(ConeTolerance::new(-1.0, 1.0).is_err());
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, n)
    }

    fn pos_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..10.0, n)
    }

    proptest! {
        #[test]
        fn gauge_norm_is_a_norm(f in vec_strategy(8), g in vec_strategy(8), u in pos_strategy(8), a in -5.0f64..5.0) {
            let s = space(8);
            let (f, g, u) = (gf(&s, &f), gf(&s, &g), gf(&s, &u));
            let nf = gauge_norm(&f, &u).unwrap();
            let ng = gauge_norm(&g, &u).unwrap();
            let nsum = gauge_norm(&f.axpy(1.0, &g), &u).unwrap();
            prop_assert!(nsum <= (nf + ng) * (1.0 + 1e-12) + 1e-300);
            let nscaled = gauge_norm(&f.scaled(a), &u).unwrap();
            prop_assert!((nscaled - a.abs() * nf).abs() <= 1e-12 * (a.abs() * nf).max(1e-300));
        }

        #[test]
        fn dominating_constant_is_tight(f in vec_strategy(8), u in pos_strategy(8)) {
            let s = space(8);
            let (f, u) = (gf(&s, &f), gf(&s, &u));
            let (v, c) = cone_dominates(&f, &u, &ConeTolerance::default()).unwrap();
            let rest = f.axpy(-c, &u);
            let w = v.witness_index.unwrap();
            for (i, r) in rest.as_slice().iter().enumerate() {
                prop_assert!(*r >= -1e-12 * f.sup_norm().max(c.abs() * u.sup_norm()));
                if i == w {
                    prop_assert!(r.abs() <= 1e-12 * f.sup_norm().max(1.0));
                }
            }
        }

        #[test]
        fn gauge_ball_matches_domination(f in vec_strategy(8), u in pos_strategy(8)) {
            let s = space(8);
            let (f, u) = (gf(&s, &f), gf(&s, &u));
            let inside = gauge_norm(&f, &u).unwrap() <= 1.0;
            let u_minus = u.axpy(-1.0, &f.map(f64::abs));
            let (_, c) = cone_dominates(&u_minus, &u, &ConeTolerance::default()).unwrap();
            prop_assert_eq!(inside, c >= 0.0);
        }

        #[test]
        fn gauge_norm_is_antitone_in_u(f in vec_strategy(8), u in pos_strategy(8), bump in proptest::collection::vec(0.0f64..3.0, 8)) {
            let s = space(8);
            let bigger: Vec<f64> = u.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let (f, u, u2) = (gf(&s, &f), gf(&s, &u), gf(&s, &bigger));
            prop_assert!(gauge_norm(&f, &u).unwrap() >= gauge_norm(&f, &u2).unwrap());
        }
    }
}
