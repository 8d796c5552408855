mod common;

use common::{grid, SmoothField};
use prandtl::grid::{
    dx, dy, integrate_y_from_0, integrate_y_to_inf, japanese, peetre_constant, weight_profile,
    Field2D, Grid, GridError, GridSpec,
};
use proptest::prelude::*;
use std::f64::consts::PI;

#[test]
fn stretch_endpoints_and_quadrature_of_one() {
    let spec = GridSpec::new(8, 200, 17.0);
    assert_eq!(spec.stretch(0.0), 0.0);
    assert!((spec.stretch(1.0) - 17.0).abs() < 1e-13);
    let g = Grid::new(spec).unwrap();
    let total: f64 = g.quad_weights().iter().sum();
    assert!((total - 17.0).abs() / 17.0 <= 1e-12);
    assert!(g.y().windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn dx_single_mode_and_constant() {
    let g = Grid::new(GridSpec { lx: 3.0, ..GridSpec::new(32, 16, 5.0) }).unwrap();
    let k = 2.0 * PI / 3.0;
    let f = Field2D::from_fn(g.clone(), |x, _| (k * x).sin());
    let d = dx(&f, 1).unwrap();
    let exact = Field2D::from_fn(g.clone(), |x, _| k * (k * x).cos());
    assert!((&d - &exact).max_abs() < 1e-12);
    let c = Field2D::from_fn(g.clone(), |_, _| 4.2);
    assert!(dx(&c, 3).unwrap().max_abs() < 1e-12);
    assert!(matches!(dx(&f, 9), Err(GridError::Resolution { .. })));
}

#[test]
fn dx_matches_second_difference_at_second_order() {
    // oracle: periodic three-point stencil, which converges at O(h^2) to the spectral value
    let f = |x: f64| (x.sin() + 0.3 * (2.0 * x + 1.0).cos()).exp();
    let mut errs = Vec::new();
    for nx in [32, 64, 128] {
        let g = grid(nx, 16, 5.0);
        let field = Field2D::from_fn(g.clone(), |x, _| f(x));
        let d2 = dx(&field, 2).unwrap();
        let h = g.hx();
        let fd: Vec<f64> = (0..nx)
            .map(|i| {
                let x = g.x()[i];
                (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
            })
            .collect();
        let err = (0..nx).map(|i| (d2.at(i, 3) - fd[i]).abs()).fold(0.0, f64::max);
        errs.push(err);
    }
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn dy_of_square_and_constant() {
    let g = grid(4, 256, 20.0);
    let f = Field2D::from_fn(g.clone(), |_, y| y * y);
    let d = dy(&f, 1).unwrap();
    let exact = Field2D::from_fn(g.clone(), |_, y| 2.0 * y);
    assert!((&d - &exact).max_abs() <= 1e-8);
    let c = Field2D::from_fn(g.clone(), |_, _| -1.5);
    assert!(dy(&c, 1).unwrap().max_abs() < 1e-9);
    assert!(matches!(dy(&c, 9), Err(GridError::UnsupportedOrder(9))));
}

#[test]
fn dy_second_derivative_of_exponential_is_at_least_fourth_order() {
    let mut errs = Vec::new();
    for ny in [32, 64, 128] {
        let g = grid(4, ny, 10.0);
        let f = Field2D::from_fn(g.clone(), |_, y| (-y).exp());
        let d = dy(&f, 2).unwrap();
        let interior = ny / 8..ny - ny / 8;
        let err = interior
            .map(|j| (d.at(0, j) - (-g.y()[j]).exp()).abs())
            .fold(0.0, f64::max);
        errs.push(err);
    }
    for w in errs.windows(2) {
        assert!(w[0] / w[1] >= 14.0, "errors {errs:?}");
    }
}

#[test]
fn cumulative_integral_of_exponential() {
    let g = grid(4, 256, 20.0);
    let f = Field2D::from_fn(g.clone(), |_, y| (-y).exp());
    let big_f = integrate_y_from_0(&f);
    assert_eq!(big_f.at(0, 0), 0.0);
    for j in 1..g.ny() {
        let y = g.y()[j];
        let exact = -(-y).exp_m1();
        assert!((big_f.at(1, j) - exact).abs() / exact <= 1e-8, "j={j}");
    }
    assert_eq!(integrate_y_from_0(&Field2D::zeros(g.clone())).max_abs(), 0.0);
}

#[test]
fn integral_of_derivative_round_trip() {
    let g = grid(8, 256, 20.0);
    let h = |x: f64, y: f64| x.cos() * y * (-y).exp();
    let dh = Field2D::from_fn(g.clone(), |x, y| x.cos() * (1.0 - y) * (-y).exp());
    let back = integrate_y_from_0(&dh);
    let exact = Field2D::from_fn(g.clone(), h);
    assert!((&back - &exact).max_abs() < 1e-8);
}

#[test]
fn tail_integral_of_algebraic_decay() {
    let g = grid(4, 256, 20.0);
    let f = Field2D::from_fn(g.clone(), |_, y| japanese(y, -4.0));
    let tail = integrate_y_to_inf(&f, 4.0).unwrap();
    // closed form: int_y^inf (1+s^2)^-2 ds
    let exact: Vec<f64> = g
        .y()
        .iter()
        .map(|&y| 0.5 * (0.5 * PI - y.atan() - y / (1.0 + y * y)))
        .collect();
    assert!(common::rel_l2(tail.line(0), &exact) <= 1e-4);
    assert!(tail.line(0).windows(2).all(|w| w[1] <= w[0]));
    assert!(matches!(integrate_y_to_inf(&f, 1.0), Err(GridError::InvalidTail(_))));
    let zero = integrate_y_to_inf(&Field2D::zeros(g.clone()), 3.0).unwrap();
    assert_eq!(zero.max_abs(), 0.0);
}

#[test]
fn tail_integral_of_exponential() {
    let g = grid(4, 256, 20.0);
    let f = Field2D::from_fn(g.clone(), |_, y| (-y).exp());
    let tail = integrate_y_to_inf(&f, 2.5).unwrap();
    for j in 0..g.ny() / 2 {
        let exact = (-g.y()[j]).exp();
        assert!((tail.at(0, j) - exact).abs() <= 1e-8 + 100.0 * (-20f64).exp());
    }
}

#[test]
fn weight_profile_closed_forms() {
    let g = Grid::new(GridSpec { alpha: 0.0, ..GridSpec::new(4, 21, 20.0) }).unwrap();
    assert!(weight_profile(0.0, &g).values().iter().all(|&v| v == 1.0));
    assert_eq!(weight_profile(-3.0, &g).at(0, 0), 1.0);
    let w2 = weight_profile(2.0, &g);
    assert_eq!(g.y()[1], 1.0);
    assert!((w2.at(2, 1) - 2.0).abs() < 1e-15);
}

#[test]
fn peetre_inequality_pointwise() {
    let k = 3.0;
    let lambda = -k;
    let c0 = peetre_constant(lambda);
    assert!((c0 - 2f64.powf(-1.5)).abs() < 1e-15);
    for a in 0..64 {
        for b in 0..64 {
            let y = 30.0 * a as f64 / 63.0;
            let s = 30.0 * b as f64 / 63.0;
            let lhs = c0 * japanese(y, lambda) * japanese(y + s, -lambda.abs());
            assert!(lhs <= japanese(s, lambda) * (1.0 + 1e-14));
        }
    }
}

#[test]
fn dx_dy_commute_and_mixed_derivative_converges() {
    let exact = |x: f64, y: f64| -x.sin() * (1.0 - y) * (-y).exp();
    let mut errs = Vec::new();
    for ny in [64, 128] {
        let g = grid(16, ny, 12.0);
        let f = Field2D::from_fn(g.clone(), |x, y| x.cos() * y * (-y).exp());
        let a = dx(&dy(&f, 1).unwrap(), 1).unwrap();
        let b = dy(&dx(&f, 1).unwrap(), 1).unwrap();
        assert!((&a - &b).max_abs() < 1e-11);
        let ex = Field2D::from_fn(g.clone(), exact);
        let err = (0..16)
            .flat_map(|i| (ny / 8..ny - ny / 8).map(move |j| (i, j)))
            .map(|(i, j)| (a.at(i, j) - ex.at(i, j)).abs())
            .fold(0.0, f64::max);
        errs.push(err);
    }
    assert!(errs[0] / errs[1] >= 8.0, "ratio {}", errs[0] / errs[1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn integrate_then_differentiate_recovers(seed in 0u64..1_000_000) {
        let g = grid(8, 256, 20.0);
        let s = SmoothField::random(seed);
        let f = s.sample(&g);
        let back = dy(&integrate_y_from_0(&f), 1).unwrap();
        // ten times the 1e-8 quadrature tolerance of the cumulative integral
        prop_assert!((&back - &f).max_abs() <= 1e-7);
    }

    #[test]
    fn weights_are_reciprocal(lambda in -8.0f64..8.0) {
        let g = grid(4, 64, 30.0);
        let p = &weight_profile(lambda, &g) * &weight_profile(-lambda, &g);
        for &v in p.values() {
            prop_assert!((v - 1.0).abs() < 1e-13);
        }
    }
}
