//! Property tests for the cone, spectral, resolvent and semigroup layers.

use std::io::BufReader;

use amplab::cone::{cone_dominates, cone_nonneg, gauge_norm, ConeTolerance};
use amplab::grid::{GridFunction, GridSpace};
use amplab::linalg::SolverConfig;
use amplab::operators::{build_laplacian, read_triplets, write_triplets, BoundaryCondition, GridOperator};
use amplab::random::{irreducible_metzler, permutation, rng};
use amplab::resolvent::{apply_resolvent, read_window_csv, scan_window, write_window_csv, OffsetLadder, Side, WindowMode};
use amplab::semigroup::{expm_apply, read_fit_table, write_fit_table};
use amplab::spectral::leading_eigenpair;
use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

fn space(n: usize) -> std::sync::Arc<GridSpace> {
    std::sync::Arc::new(GridSpace::cells(n).unwrap())
}

fn metzler(seed: u64, n: usize) -> GridOperator {
    let m = irreducible_metzler(&mut rng(seed), n, 0.3);
    GridOperator::custom(&m, "metzler").unwrap()
}

fn values(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    len.prop_flat_map(|n| prop::collection::vec(-10.0..10.0f64, n))
}

fn nonneg(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..5.0f64, n).prop_filter("nonzero", |v| v.iter().any(|x| *x > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gauge_norm_is_a_norm(a in values(2..30), c in -5.0..5.0f64) {
        let n = a.len();
        let s = space(n);
        let u = GridFunction::from_fn(&s, |i, _| 1.0 + (i % 3) as f64).unwrap();
        let f = GridFunction::from_slice(&s, &a).unwrap();
        let g = GridFunction::from_fn(&s, |i, _| (i as f64).sin()).unwrap();
        let nf = gauge_norm(&f, &u).unwrap();
        prop_assert!((gauge_norm(&f.scaled(c), &u).unwrap() - c.abs() * nf).abs() <= 1e-12 * (1.0 + nf * c.abs()));
        let sum = gauge_norm(&f.axpy(1.0, &g), &u).unwrap();
        prop_assert!(sum <= nf + gauge_norm(&g, &u).unwrap() + 1e-12);
        // |f| ≤ ‖f‖_u u entrywise
        for (x, w) in f.as_slice().iter().zip(u.as_slice()) {
            prop_assert!(x.abs() <= nf * w * (1.0 + 1e-15));
        }
    }

    #[test]
    fn nonneg_verdict_is_monotone_in_tolerance(a in values(1..30), t1 in 1e-12..1e-2f64, t2 in 1e-12..1e-2f64) {
        let s = space(a.len());
        let f = GridFunction::from_slice(&s, &a).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let loose = cone_nonneg(&f, &ConeTolerance::relative(hi).unwrap(), f.sup_norm());
        let tight = cone_nonneg(&f, &ConeTolerance::relative(lo).unwrap(), f.sup_norm());
        prop_assert!(!tight.holds || loose.holds);
        prop_assert_eq!(loose.margin, tight.margin);
    }

    #[test]
    fn domination_constant_is_the_pointwise_ratio_minimum(a in nonneg(12)) {
        let s = space(12);
        let u = GridFunction::from_fn(&s, |i, _| 0.5 + i as f64 / 12.0).unwrap();
        let f = GridFunction::from_slice(&s, &a).unwrap();
        let (_, c) = cone_dominates(&f, &u, &ConeTolerance::default()).unwrap();
        let diff = f.axpy(-c, &u);
        prop_assert!(diff.as_slice().iter().all(|x| *x >= -1e-12));
        prop_assert!(diff.as_slice().iter().any(|x| x.abs() <= 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn leading_eigenpair_of_irreducible_metzler(seed in any::<u64>(), n in 2usize..25) {
        let op = metzler(seed, n);
        let rep = leading_eigenpair(&op, &cfg()).unwrap();
        prop_assert!(rep.is_simple());
        prop_assert!(rep.c_dom > 0.0 && rep.phi_min > 0.0);
        prop_assert!((rep.phi.pairing(&rep.v) - 1.0).abs() <= 1e-8);
        // every eigenvalue of the dense matrix has real part ≤ λ₀
        let dense = op.matrix().to_dense();
        for z in dense.complex_eigenvalues().iter() {
            prop_assert!(z.re <= rep.lambda0 + 1e-8 * rep.scale);
        }
    }

    #[test]
    fn leading_eigenvalue_is_permutation_invariant(seed in any::<u64>(), n in 2usize..20) {
        let mut r = rng(seed);
        let m = irreducible_metzler(&mut r, n, 0.3);
        let p = permutation(&mut r, n);
        let a = leading_eigenpair(&GridOperator::custom(&m, "a").unwrap(), &cfg()).unwrap();
        let b = leading_eigenpair(&GridOperator::custom(&(&p * &m * p.transpose()), "b").unwrap(), &cfg()).unwrap();
        prop_assert!((a.lambda0 - b.lambda0).abs() <= 1e-10 * a.scale);
    }

    #[test]
    fn resolvent_identity(seed in any::<u64>(), n in 2usize..25, d1 in 0.1..5.0f64, d2 in 0.1..5.0f64) {
        let op = metzler(seed, n);
        let rep = leading_eigenpair(&op, &cfg()).unwrap();
        let (l, m) = (rep.lambda0 + d1, rep.lambda0 + d2);
        let f = GridFunction::from_fn(op.space(), |i, _| (i as f64 * 0.7).cos()).unwrap();
        let rl = apply_resolvent(&op, l, &f, &cfg()).unwrap();
        let rm = apply_resolvent(&op, m, &f, &cfg()).unwrap();
        let rlrm = apply_resolvent(&op, l, &rm, &cfg()).unwrap();
        let lhs = rl.axpy(-1.0, &rm);
        let rhs = rlrm.scaled(m - l);
        let err = (lhs.values() - rhs.values()).amax();
        prop_assert!(err <= 1e-9 * (1.0 + rl.sup_norm()));
    }

    #[test]
    fn resolvent_is_positive_right_of_the_spectrum(seed in any::<u64>(), n in 2usize..25, d in 1e-3..5.0f64, a in nonneg(25)) {
        let op = metzler(seed, n);
        let rep = leading_eigenpair(&op, &cfg()).unwrap();
        let f = GridFunction::from_slice(op.space(), &a[..n]).unwrap();
        let x = apply_resolvent(&op, rep.lambda0 + d, &f, &cfg()).unwrap();
        prop_assert!(x.as_slice().iter().all(|v| *v >= -1e-10 * x.sup_norm()));
    }

    #[test]
    fn plain_window_width_is_monotone_in_tolerance(seed in any::<u64>(), n in 3usize..15, a in nonneg(15)) {
        let op = metzler(seed, n);
        let rep = leading_eigenpair(&op, &cfg()).unwrap();
        let f = GridFunction::from_slice(op.space(), &a[..n]).unwrap();
        let u = op.space().ones();
        let ladder = OffsetLadder::default();
        let delta = |rel: f64| {
            scan_window(&op, &rep, &f, Side::Left, WindowMode::Plain, &u, &ladder, &ConeTolerance::relative(rel).unwrap(), &cfg()).unwrap().delta
        };
        prop_assert!(delta(1e-12) <= delta(1e-6));
    }

    #[test]
    fn semigroup_law_and_positivity(seed in any::<u64>(), n in 2usize..20, s in 0.0..1.0f64, t in 0.0..1.0f64, a in nonneg(20)) {
        let op = metzler(seed, n);
        let f = GridFunction::from_slice(op.space(), &a[..n]).unwrap();
        let once = expm_apply(&op, s + t, &f).unwrap();
        let twice = expm_apply(&op, s, &expm_apply(&op, t, &f).unwrap()).unwrap();
        prop_assert!((once.values() - twice.values()).amax() <= 1e-9 * (1.0 + once.sup_norm()));
        prop_assert!(once.as_slice().iter().all(|v| *v >= -1e-12 * once.sup_norm()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn triplet_files_round_trip(seed in any::<u64>(), n in 1usize..30) {
        let op = metzler(seed, n);
        let mut buf = Vec::new();
        write_triplets(&op, &mut buf).unwrap();
        let back = read_triplets(BufReader::new(buf.as_slice())).unwrap();
        prop_assert_eq!(back.matrix().to_dense(), op.matrix().to_dense());
        prop_assert_eq!(back.space().as_ref(), op.space().as_ref());
    }

    #[test]
    fn fit_tables_round_trip(rows in prop::collection::vec((1e-6..1.0f64, 1e-3..1e6f64, 1e-3..1e6f64), 0..20)) {
        let mut buf = Vec::new();
        write_fit_table("t", &rows, &mut buf).unwrap();
        let (label, back) = read_fit_table(buf.as_slice()).unwrap();
        prop_assert_eq!(label, "t");
        prop_assert_eq!(back, rows);
    }
}

#[test]
fn window_csv_round_trips() {
    let op = build_laplacian(1, 20, BoundaryCondition::robin(1.0)).unwrap();
    let rep = leading_eigenpair(&op, &cfg()).unwrap();
    let f = GridFunction::from_fn(op.space(), |_, x| x[0] * x[0]).unwrap();
    let u = op.space().ones();
    let w = scan_window(&op, &rep, &f, Side::Left, WindowMode::Plain, &u, &OffsetLadder::default(), &ConeTolerance::default(), &cfg()).unwrap();
    let mut buf = Vec::new();
    write_window_csv(&w, &mut buf).unwrap();
    let rows = read_window_csv(buf.as_slice()).unwrap();
    assert_eq!(rows.len(), w.profile.len());
    for (row, p) in rows.iter().zip(&w.profile) {
        assert_eq!(row.0, p.offset);
        assert_eq!(row.1, p.lambda);
        assert_eq!(row.2 == "pass", p.passed());
        assert_eq!(row.4, p.c_value);
    }
}

#[test]
fn dense_oracle_matches_resolvent() {
    let op = metzler(9, 12);
    let lambda = leading_eigenpair(&op, &cfg()).unwrap().lambda0 + 0.3;
    let f = GridFunction::constant(op.space(), 1.0);
    let dense = DMatrix::identity(12, 12) * lambda - op.matrix().to_dense();
    let want = dense.lu().solve(f.values()).unwrap();
    let got = apply_resolvent(&op, lambda, &f, &cfg()).unwrap();
    for (a, b) in got.as_slice().iter().zip(want.iter()) {
        assert_relative_eq!(*a, *b, max_relative = 1e-10);
    }
}
