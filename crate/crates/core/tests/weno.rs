mod common;

use std::f64::consts::PI;

use hpinn_core::weno::{
    discontinuity_flags, lax_friedrichs_split, reconstruct_interface_flux, smoothness_indicators,
    weno_derivative, wenoz_weights, DiscontinuityMask, WenoConstants,
};
use hpinn_core::{Extension, Flux, GridField};
use proptest::prelude::*;

/// `d/dx sin(2 pi x)` on a periodic unit grid of `n` points, returning the
/// L1 and max errors.
fn advection_errors(n: usize) -> (f64, f64) {
    let dx = 1.0 / n as f64;
    let u = GridField::new(
        (0..n).map(|j| (2.0 * PI * j as f64 * dx).sin()).collect(),
        0.0,
        dx,
    );
    let d = weno_derivative(&u, &Flux::Linear(1.0), 1.0, Extension::Periodic, &WenoConstants::default())
        .unwrap();
    let err: Vec<f64> = (0..n)
        .map(|j| (d.values[j] - 2.0 * PI * (2.0 * PI * d.x(j)).cos()).abs())
        .collect();
    (err.iter().sum::<f64>() * dx, err.iter().copied().fold(0.0, f64::max))
}

#[test]
fn smooth_advection_converges_at_fifth_order() {
    let errs: Vec<(f64, f64)> = [64, 128, 256].iter().map(|&n| advection_errors(n)).collect();
    let l1: Vec<f64> = errs.iter().map(|e| e.0).collect();
    let max: Vec<f64> = errs.iter().map(|e| e.1).collect();
    for order in common::observed_orders(&l1).into_iter().chain(common::observed_orders(&max)) {
        assert!(order >= 4.5, "order {order}, errors {errs:?}");
    }
}

#[test]
fn burgers_derivative_of_smooth_data_matches_chain_rule() {
    let n = 400;
    let u = GridField::sample(-1.0, 1.0, n, |x| 0.5 + 0.3 * (PI * x).sin());
    let d = weno_derivative(&u, &Flux::Burgers, 0.9, Extension::OddReflection, &WenoConstants::default())
        .unwrap();
    for j in 5..n - 5 {
        let x = u.x(j);
        let exact = (0.5 + 0.3 * (PI * x).sin()) * 0.3 * PI * (PI * x).cos();
        assert!((d.values[j] - exact).abs() < 1e-6, "x = {x}");
    }
}

#[test]
fn split_fluxes_are_monotone_for_admissible_lambda() {
    let u = GridField::sample(-1.0, 1.0, 50, |x| -(PI * x).sin());
    let s = lax_friedrichs_split(&u, &Flux::Burgers, 1.1).unwrap();
    // f+ nondecreasing and f- nonincreasing in u
    let mut idx: Vec<usize> = (0..50).collect();
    idx.sort_by(|&a, &b| u.values[a].partial_cmp(&u.values[b]).unwrap());
    for w in idx.windows(2) {
        assert!(s.fplus.values[w[1]] >= s.fplus.values[w[0]] - 1e-15);
        assert!(s.fminus.values[w[1]] <= s.fminus.values[w[0]] + 1e-15);
    }
    for j in 0..50 {
        let f = 0.5 * u.values[j] * u.values[j];
        assert!((s.fplus.values[j] + s.fminus.values[j] - f).abs() < 1e-15);
    }
}

#[test]
fn reconstruction_is_exact_for_quadratics_on_smooth_stencils() {
    // cell averages of x^2 over [j - 1/2, j + 1/2] reconstruct x^2 at j + 1/2
    let avg = |j: f64| j * j + 1.0 / 12.0;
    let f = [-2.0, -1.0, 0.0, 1.0, 2.0].map(avg);
    let got = reconstruct_interface_flux(&f, &WenoConstants::default());
    assert!((got - 0.25).abs() < 1e-12, "{got}");
    let line = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert!((reconstruct_interface_flux(&line, &WenoConstants::default()) - 3.5).abs() < 1e-12);
}

fn unit_step(n: usize) -> GridField {
    GridField::sample(-1.0, 1.0, n, |x| if x < 0.0 { 1.0 } else { 0.0 })
}

#[test]
fn indicator_ignores_a_smooth_sine() {
    let u = GridField::sample(-1.0, 1.0, 300, |x| (PI * x).sin());
    assert_eq!(discontinuity_flags(&u, &WenoConstants::default()).count(), 0);
}

#[test]
fn indicator_confines_flags_of_a_step_to_the_jump() {
    let u = unit_step(300);
    let flags = discontinuity_flags(&u, &WenoConstants::default());
    let flagged: Vec<usize> = flags.flagged().collect();
    assert!(!flagged.is_empty());
    // jump between 149 and 150
    assert!(flagged.iter().all(|&j| (145..155).contains(&j)), "{flagged:?}");
}

#[test]
fn indicator_ignores_constants() {
    for c in [0.0, 1.0, -3.5] {
        let u = GridField::sample(-1.0, 1.0, 300, |_| c);
        assert_eq!(discontinuity_flags(&u, &WenoConstants::default()).count(), 0);
    }
}

#[test]
fn indicator_follows_a_moving_jump() {
    for k in [40usize, 100, 220] {
        let u = GridField::new((0..300).map(|j| if j <= k { -0.7 } else { 0.4 }).collect(), -1.0, 2.0 / 299.0);
        let flagged: Vec<usize> = discontinuity_flags(&u, &WenoConstants::default()).flagged().collect();
        assert!(!flagged.is_empty());
        assert!(flagged.iter().all(|&j| j + 5 > k && j < k + 6), "jump after {k}: {flagged:?}");
    }
}

#[test]
fn dilation_covers_the_radius_and_stays_in_bounds() {
    let mut m = DiscontinuityMask::zeros(10);
    m.flags[1] = true;
    m.flags[8] = true;
    let d = m.dilate(3);
    assert_eq!(d.count(), 10);
    let mut m = DiscontinuityMask::zeros(20);
    m.flags[10] = true;
    assert_eq!(m.dilate(3).flagged().collect::<Vec<_>>(), (7..=13).collect::<Vec<_>>());
}

proptest! {
    #[test]
    fn indicators_are_nonnegative_and_weights_normalized(
        f in prop::array::uniform5(-10.0f64..10.0)
    ) {
        let beta = smoothness_indicators(&f);
        prop_assert!(beta.iter().all(|&b| b >= -1e-12 * (1.0 + f.iter().map(|v| v * v).sum::<f64>())));
        let w = wenoz_weights(&beta.map(|b| b.max(0.0)), &WenoConstants::default());
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        prop_assert!(w.iter().all(|&wk| (0.0..=1.0).contains(&wk)));
    }

    #[test]
    fn reconstruction_lies_within_the_convex_hull_of_candidates(
        f in prop::array::uniform5(-10.0f64..10.0)
    ) {
        let q = hpinn_core::weno::candidate_fluxes(&f);
        let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let r = reconstruct_interface_flux(&f, &WenoConstants::default());
        prop_assert!(r >= lo - 1e-12 && r <= hi + 1e-12);
    }

    #[test]
    fn derivative_of_shifted_data_is_unchanged_for_linear_flux(
        shift in -5.0f64..5.0
    ) {
        let u = GridField::new((0..32).map(|j| (2.0 * PI * j as f64 / 32.0).cos()).collect(), 0.0, 1.0 / 32.0);
        let v = u.map(|x| x + shift);
        let consts = WenoConstants::default();
        let a = weno_derivative(&u, &Flux::Linear(1.0), 1.0, Extension::Periodic, &consts).unwrap();
        let b = weno_derivative(&v, &Flux::Linear(1.0), 1.0, Extension::Periodic, &consts).unwrap();
        prop_assert!(common::max_abs_diff(&a.values, &b.values) < 1e-9);
    }
}
