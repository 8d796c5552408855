mod common;

use common::grid;
use prandtl::compat::*;
use prandtl::grid::{dy, Field2D};
use prandtl::shear::ShearProfile;
use proptest::prelude::*;
use std::f64::consts::PI;

fn k3() -> ShearProfile {
    ShearProfile::builtin(3.0, 6).unwrap()
}

fn lines(g: &std::sync::Arc<prandtl::grid::Grid>, fs: &[&dyn Fn(f64) -> f64]) -> Vec<Vec<f64>> {
    fs.iter().map(|f| g.x().iter().map(|&x| f(x)).collect()).collect()
}

fn l2(g: &prandtl::grid::Grid, v: &[f64]) -> f64 {
    (v.iter().map(|a| a * a).sum::<f64>() * g.hx()).sqrt()
}

/// Jet with free odd orders and even orders 0..=6 set from the closed forms by hand.
fn manufactured(g: &std::sync::Arc<prandtl::grid::Grid>, a: f64) -> BoundaryJet {
    let z = |_: f64| 0.0;
    let j1 = move |x: f64| a * x.sin();
    let j3 = move |x: f64| 0.5 * a * x.cos();
    let j5 = move |x: f64| 0.2 * a * (2.0 * x).sin();
    let mut orders = lines(g, &[&z, &j1, &z, &j3, &z, &j5, &z]);
    let base = BoundaryJet::new(g.clone(), orders.clone());
    orders[4] = order4_line(&base, &k3()).unwrap().iter().map(|r| -r).collect();
    let with4 = BoundaryJet::new(g.clone(), orders.clone());
    orders[6] = order6_line(&with4, &k3(), 0.0).unwrap().iter().map(|r| -r).collect();
    BoundaryJet::new(g.clone(), orders)
}

#[test]
fn zero_datum_has_zero_residuals() {
    let g = grid(32, 64, 10.0);
    let jet = BoundaryJet::new(g.clone(), vec![vec![0.0; 32]; 9]);
    let r = check_compat_order6_reg(&jet, &k3(), 0.3).unwrap();
    assert!(r.pass && r.residuals.iter().all(|&v| v == 0.0));
    let c = build_corrector(&jet, &k3(), 0.1, 6, 8).unwrap();
    assert_eq!(c.mu.max_abs(), 0.0);
}

#[test]
fn cubic_wall_profile_order4_residual() {
    // u0 = sin(x) y^3 e^{-y} cutoff(y): wall derivatives 0, 0, 0, 6, -24 (times sin x)
    let g = grid(32, 256, 10.0);
    let s = |x: f64| x.sin();
    let z = |_: f64| 0.0;
    let j3 = |x: f64| 6.0 * x.sin();
    let j4 = |x: f64| -24.0 * x.sin();
    let jet = BoundaryJet::new(g.clone(), lines(&g, &[&z, &z, &z, &j3, &j4]));
    let r = check_compat_order4(&jet, &k3()).unwrap();
    assert_eq!(r.residual(0), Some(0.0));
    assert_eq!(r.residual(2), Some(0.0));
    // direct: || u^s_y(0) dx dy u0 - d^4 u0 || = ||24 sin x|| = 24 sqrt(pi)
    assert!((r.residual(4).unwrap() - 24.0 * PI.sqrt()).abs() < 1e-10);
    assert!(!r.pass);
    // the same datum sampled: the wall stencils recover the residual approximately
    let f = Field2D::from_fn(g.clone(), |x, y| s(x) * y.powi(3) * (-y).exp() * cutoff(y));
    let num = BoundaryJet::from_field(&f, 4).unwrap();
    let rn = check_compat_order4(&num, &k3()).unwrap();
    assert!((rn.residual(4).unwrap() - 24.0 * PI.sqrt()).abs() / (24.0 * PI.sqrt()) < 1e-3);
}

#[test]
fn manufactured_datum_passes_through_order6() {
    let g = grid(32, 64, 10.0);
    let jet = manufactured(&g, 0.3);
    let r4 = check_compat_order4(&jet, &k3()).unwrap();
    assert!(r4.residuals.iter().all(|&v| v <= 1e-10));
    let r6 = check_compat_order6_reg(&jet, &k3(), 0.0).unwrap();
    assert!(r6.pass, "{r6:?}");
}

#[test]
fn regularization_term_shows_up_in_order6() {
    let g = grid(32, 64, 10.0);
    let jet = manufactured(&g, 0.3);
    let eps = 0.1;
    let r = check_compat_order6_reg(&jet, &k3(), eps).unwrap();
    let j1x = g.dx_line(&jet.orders[1], 1).unwrap();
    let j1xx = g.dx_line(&jet.orders[1], 2).unwrap();
    let direct: Vec<f64> = j1x.iter().zip(&j1xx).map(|(a, b)| 2.0 * eps * a * b).collect();
    assert!(r.residual(6).unwrap() > 1e-3);
    assert!((r.residual(6).unwrap() - l2(&g, &direct)).abs() < 1e-12);
}

#[test]
fn corrector_leading_coefficient_and_effect() {
    let g = grid(32, 256, 10.0);
    // u0 = sin(x) p(y) with p'(0) = 1: mu^6 = -2 cos(x) (-sin(x)) = sin(2x)
    let z = |_: f64| 0.0;
    let s = |x: f64| x.sin();
    let jet = BoundaryJet::new(g.clone(), lines(&g, &[&z, &s]));
    let c = build_corrector(&jet, &k3(), 0.1, 6, 8).unwrap();
    let (o, mu6) = &c.coefficients[0];
    assert_eq!(*o, 6);
    for (i, &x) in g.x().iter().enumerate() {
        assert!((mu6[i] - (2.0 * x).sin()).abs() < 1e-12);
    }
    // x-independent slope: the factor dx dy u0 vanishes
    let one = |_: f64| 1.0;
    let flat = BoundaryJet::new(g.clone(), lines(&g, &[&z, &one]));
    let cf = build_corrector(&flat, &k3(), 0.1, 6, 8).unwrap();
    assert!(cf.coefficients[0].1.iter().all(|v| v.abs() < 1e-13));

    let m = manufactured(&g, 0.3);
    for eps in [0.1, 0.01, 1e-3] {
        let c = build_corrector(&m, &k3(), eps, 6, 8).unwrap();
        let corrected = c.apply_to_jet(&m, eps);
        let r = check_compat_order6_reg(&corrected, &k3(), eps).unwrap();
        assert!(r.residual(6).unwrap() < 1e-8, "eps={eps}: {r:?}");
        // mu vanishes beyond the cutoff and starts at y^6
        for j in 0..g.ny() {
            let y = g.y()[j];
            for i in 0..g.nx() {
                let v = c.mu.at(i, j).abs();
                if y >= 2.0 {
                    assert_eq!(v, 0.0);
                } else if y <= 1.0 {
                    assert!(v <= y.powi(6) * 0.12);
                }
            }
        }
    }
    assert!(build_corrector(&m, &k3(), 0.1, 7, 8).is_err());
    assert!(build_corrector(&m, &k3(), 0.1, 10, 8).is_err());
}

#[test]
fn series_expansion_agrees_with_closed_forms() {
    let g = grid(32, 64, 10.0);
    let sh = k3();
    let z = |_: f64| 0.0;
    let a1 = |x: f64| 0.4 * x.sin() + 0.1;
    let a3 = |x: f64| (2.0 * x).cos();
    let a4 = |x: f64| 0.3 * x.cos();
    let a5 = |x: f64| -0.2 * x.sin();
    let a6 = |x: f64| 0.7 * (3.0 * x).sin();
    let jet = BoundaryJet::new(g.clone(), lines(&g, &[&z, &a1, &z, &a3, &a4, &a5, &a6]));
    for eps in [0.0, 0.05] {
        let ser = series_residuals(&jet, &sh, eps, 6).unwrap();
        let r4 = order4_line(&jet, &sh).unwrap();
        assert_eq!(ser[2].0, 4);
        assert!(ser[2].1.iter().zip(&r4).all(|(a, b)| (a - b).abs() < 1e-12));
    }
    // once order 4 holds, the order-6 expansion matches the regularized closed form
    let fixed = make_compatible(&jet, &sh, 0.0, 4).unwrap();
    for eps in [0.0, 0.05, 0.3] {
        let ser = series_residuals(&fixed, &sh, eps, 6).unwrap();
        let r6 = order6_line(&fixed, &sh, eps).unwrap();
        let err = ser[3].1.iter().zip(&r6).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-11, "eps={eps}: {err}");
    }
}

#[test]
fn order8_corrector_from_series() {
    let g = grid(32, 128, 10.0);
    let sh = k3();
    let z = |_: f64| 0.0;
    let a1 = |x: f64| 0.2 * x.sin();
    let a3 = |x: f64| 0.1 * x.cos();
    let a5 = |x: f64| 0.1 * (2.0 * x).sin();
    let a7 = |x: f64| 0.05 * x.cos();
    let base = BoundaryJet::new(g.clone(), lines(&g, &[&z, &a1, &z, &a3, &z, &a5, &z, &a7]));
    let u0 = make_compatible(&base, &sh, 0.0, 8).unwrap();
    assert!(check_compat_order6_reg(&u0, &sh, 0.0).unwrap().pass);
    let eps = 0.01;
    let c = build_corrector(&u0, &sh, eps, 8, 8).unwrap();
    let fixed = c.apply_to_jet(&u0, eps);
    assert!(check_compat_order6_reg(&fixed, &sh, eps).unwrap().pass);
    let ser = series_residuals(&fixed, &sh, eps, 8).unwrap();
    assert!(l2(&g, &ser[4].1) < 1e-8);
}

#[test]
fn corrector_scales_linearly_in_eps() {
    let g = grid(32, 256, 10.0);
    let sh = k3();
    let m = manufactured(&g, 0.3);
    let u0 = m.to_field();
    let du0 = dy(&u0, 1).unwrap();
    let norm = |f: &Field2D| prandtl::spaces::norm_l2_weighted(f, 3.25);
    let mut diffs = Vec::new();
    let mut mu_norms = Vec::new();
    for eps in [1e-1, 1e-2, 1e-3] {
        let c = build_corrector(&m, &sh, eps, 6, 8).unwrap();
        let dmu = dy(&c.mu, 1).unwrap();
        mu_norms.push(norm(&dmu));
        let du = &du0 + &dmu.scale(eps);
        diffs.push(norm(&(&du - &du0)));
        // inflation bound, eps_0 = 0.1 measured here
        assert!(norm(&du) <= 1.5 * norm(&du0));
    }
    assert!(mu_norms.windows(2).all(|w| (w[0] - w[1]).abs() <= 1e-12 * w[0]));
    for w in diffs.windows(2) {
        assert!((w[0] / w[1] - 10.0).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn residuals_invariant_under_periodic_shift(shift in 1usize..31, a in 0.05f64..0.5, eps in 0.0f64..0.2) {
        let g = grid(32, 64, 10.0);
        let jet = manufactured(&g, a);
        let mut bumped = jet.clone();
        bumped.orders[4].iter_mut().enumerate().for_each(|(i, v)| *v += 0.01 * (i as f64).sin());
        let shifted = BoundaryJet::new(
            g.clone(),
            bumped.orders.iter().map(|l| (0..32).map(|i| l[(i + shift) % 32]).collect()).collect(),
        );
        let r1 = check_compat_order6_reg(&bumped, &k3(), eps).unwrap();
        let r2 = check_compat_order6_reg(&shifted, &k3(), eps).unwrap();
        for (x, y) in r1.residuals.iter().zip(&r2.residuals) {
            prop_assert!((x - y).abs() <= 1e-11 * (1.0 + x));
        }
    }
}

fn oracle_rates(u0: &Field2D, order: usize) -> Vec<f64> {
    [4e-3, 1e-3, 2.5e-4]
        .iter()
        .map(|&dt| numeric_compat_oracle(u0, &k3(), 1e-3, order, dt).unwrap())
        .collect()
}

#[test]
fn numeric_oracle_zero_datum() {
    let g = grid(16, 128, 20.0);
    let r = numeric_compat_oracle(&Field2D::zeros(g), &k3(), 1e-3, 4, 1e-3).unwrap();
    assert_eq!(r, 0.0);
}

#[test]
fn numeric_oracle_separates_compatible_from_order4_violation() {
    let g = grid(16, 128, 20.0);
    // y^5 e^{-y^2}: every closed-form condition through order 6 holds
    let good = Field2D::from_fn(g.clone(), |x, y| 1e-2 * x.sin() * y.powi(5) * (-y * y).exp());
    // y^4 e^{-y^2}: d_y^4 u0(x, 0) = 24 a sin x while d_x d_y u0(x, 0) = 0
    let bad = Field2D::from_fn(g.clone(), |x, y| 1e-2 * x.sin() * y.powi(4) * (-y * y).exp());
    let rg = oracle_rates(&good, 4);
    let rb = oracle_rates(&bad, 4);
    println!("compatible {rg:?} violating {rb:?}");
    let growth_good = rg[2] / rg[0];
    let growth_bad = rb[2] / rb[0];
    assert!(growth_good < 4.0, "compatible growth {growth_good}");
    assert!(growth_bad >= 10.0, "violating growth {growth_bad}");
    assert!(numeric_compat_oracle(&good, &k3(), 1e-3, 3, 1e-4).is_err());
}
