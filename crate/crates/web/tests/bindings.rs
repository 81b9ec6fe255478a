use amplab_web::{leading_eigenvector_data, smoothing_curve_data, window_profile_data};

#[test]
fn robin_window_profile_is_nonempty_on_the_left() {
    let w = window_profile_data("robin:1:1", 40, "left", 3).unwrap();
    assert!(w.delta > 0.0);
    assert_eq!(w.input.len(), 40);
    assert!(w.points.iter().any(|p| p.passed));
    assert!(w.points.iter().all(|p| p.lambda < w.lambda0));
}

#[test]
fn right_window_is_full() {
    let w = window_profile_data("dirichlet:1", 30, "right", 1).unwrap();
    assert!(w.points.iter().all(|p| p.passed));
}

#[test]
fn dirichlet_eigenvector_matches_the_sine_mode() {
    let n = 49;
    let e = leading_eigenvector_data("dirichlet:1", n).unwrap();
    let h = 1.0 / (n + 1) as f64;
    let want = -2.0 * (1.0 - (std::f64::consts::PI * h).cos()) / (h * h);
    assert!((e.lambda0 - want).abs() <= 1e-10 * want.abs());
    assert!(e.v.iter().all(|x| *x > 0.0));
    assert!((e.v.iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
}

#[test]
fn smoothing_curve_decreases_in_time() {
    let s = smoothing_curve_data("dirichlet:1", 40, 2.0).unwrap();
    assert_eq!(s.table.len(), 7);
    assert!(s.q > 0.0);
    assert!(s.table.windows(2).all(|w| w[1].1 <= w[0].1));
}

#[test]
fn bad_inputs_are_errors() {
    assert!(window_profile_data("robin:1:1", 20, "up", 0).is_err());
    assert!(leading_eigenvector_data("laplace", 20).is_err());
    assert!(leading_eigenvector_data("dirichlet:3", 40).is_err());
}
