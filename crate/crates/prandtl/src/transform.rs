//! The monotone change of unknowns `g_n = d_y(d_x^n u / (u^s_y + u_y))`, the source terms of
//! its evolution equation, the monotonicity window and the energy monitor.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{dx, dy, integrate_y_from_0, japanese, Field2D, Grid, GridError};
use crate::shear::ShearEvolution;
use crate::solver::{boundary_consistency, SolverState};
use crate::spaces::{anisotropic_breakdown, l2_weighted_sq, norm_hm_weighted, norm_l2_weighted, NormError, SobolevParams};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error("monotonicity window violated (margin {0:e})")]
    Window(f64),
    #[error("order {n} outside 0..={m}")]
    Order { n: usize, m: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `(c~1/4) <y>^{-k} <= u^s_y + u_y <= 4 c~2 <y>^{-k}` and the size threshold `zeta`.
#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityWindow {
    pub c_tilde1: f64,
    pub c_tilde2: f64,
    pub k: f64,
    pub cm_est: f64,
    pub zeta: f64,
}

impl MonotonicityWindow {
    /// `zeta = min(1, c~1 / (4 C_m))` unless overridden.
    pub fn new(shear: &ShearEvolution, cm: f64, zeta: Option<f64>) -> Self {
        let zeta = zeta.unwrap_or_else(|| (shear.c_tilde1 / (4.0 * cm)).min(1.0));
        MonotonicityWindow {
            c_tilde1: shear.c_tilde1,
            c_tilde2: shear.c_tilde2,
            k: shear.k,
            cm_est: cm,
            zeta,
        }
    }

    fn bounds(&self, y: f64) -> (f64, f64) {
        let e = japanese(y, -self.k);
        (0.25 * self.c_tilde1 * e, 4.0 * self.c_tilde2 * e)
    }
}

/// `(pass, margin)` with margin the smallest signed distance of `u^s_y + u_y` to the window.
pub fn check_monotonicity(state: &SolverState, window: &MonotonicityWindow) -> (bool, f64) {
    let g = state.grid();
    let ny = g.ny();
    let usy = state.shear.deriv(1);
    let bounds: Vec<(f64, f64)> = g.y().iter().map(|&y| window.bounds(y)).collect();
    let margin = state
        .w
        .values()
        .iter()
        .enumerate()
        .map(|(idx, &w)| {
            let j = idx % ny;
            let d = usy[j] + w;
            (d - bounds[j].0).min(bounds[j].1 - d)
        })
        .fold(f64::INFINITY, f64::min);
    (margin >= 0.0, margin)
}

/// `max |w| <y>^{lambda} / ||w||_{H^m_lambda}` over `samples` random smooth fields.
pub fn estimate_cm(grid: &Arc<Grid>, params: &SobolevParams, samples: usize, seed: u64) -> Result<f64, NormError> {
    let lambda = params.lambda();
    let max_mode = (grid.nx() / 8).max(1) as i32;
    // each term: amplitude, x-mode, phase, centre and width of a Gaussian bump in y
    let fields: Vec<Vec<(f64, i32, f64, f64, f64)>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        (
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(0..=max_mode),
                            rng.gen_range(0.0..std::f64::consts::TAU),
                            rng.gen_range(0.0..3.0),
                            rng.gen_range(0.3..2.0),
                        )
                    })
                    .collect()
            })
            .collect()
    };
    let weight: Vec<f64> = grid.y().iter().map(|&y| japanese(y, lambda)).collect();
    let ratios = fields
        .par_iter()
        .map(|terms| {
            let f = Field2D::from_fn(grid.clone(), |x, y| {
                terms
                    .iter()
                    .map(|&(a, n, phi, b, s)| a * (n as f64 * x + phi).cos() * (-((y - b) / s).powi(2)).exp())
                    .sum()
            });
            let ny = grid.ny();
            let sup = f
                .values()
                .iter()
                .enumerate()
                .map(|(idx, v)| v.abs() * weight[idx % ny])
                .fold(0.0, f64::max);
            let n = norm_hm_weighted(&f, params.m, lambda)?.norm();
            Ok(if n > 0.0 { sup / n } else { 0.0 })
        })
        .collect::<Result<Vec<f64>, NormError>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone)]
pub struct TransformFields {
    pub m: usize,
    /// `g[n] = d_y ginv[n]`, `n = 0..=m`.
    pub g: Vec<Field2D>,
    /// `ginv[n] = d_x^n u / (u^s_y + u_y)`.
    pub ginv: Vec<Field2D>,
    pub eta1: Field2D,
    pub eta2: Field2D,
    /// `u^s_y + u_y`.
    pub denom: Field2D,
}

fn shear_plus(state: &SolverState, p: usize, f: &Field2D) -> Field2D {
    f.add_profile(state.shear.deriv(p))
}

/// The fields `g_n, d_y^{-1} g_n, eta1, eta2` for `n = 0..=m`.
pub fn compute_transform(state: &SolverState, m: usize, window: &MonotonicityWindow) -> Result<TransformFields, TransformError> {
    let (pass, margin) = check_monotonicity(state, window);
    if !pass {
        return Err(TransformError::Window(margin));
    }
    let denom = shear_plus(state, 1, &state.w);
    let wy = dy(&state.w, 1)?;
    let eta1 = dx(&state.w, 1)?.zip(&denom, |a, d| a / d);
    let eta2 = shear_plus(state, 2, &wy).zip(&denom, |a, d| a / d);
    let ginv: Vec<Field2D> = (0..=m)
        .map(|n| Ok(dx(&state.u, n)?.zip(&denom, |a, d| a / d)))
        .collect::<Result<_, GridError>>()?;
    let g = ginv.iter().map(|q| dy(q, 1)).collect::<Result<_, _>>()?;
    Ok(TransformFields {
        m,
        g,
        ginv,
        eta1,
        eta2,
        denom,
    })
}

fn binom(n: usize, i: usize) -> f64 {
    (1..=i).fold(1.0, |acc, j| acc * (n + 1 - j) as f64 / j as f64)
}

/// The six source terms of the `g_n` equation
/// `g_t + (u^s + u) g_x - g_yy - eps g_xx - 2 eps (d_x d_y^{-1} g) d_y eta1 = sum M_j`:
///
/// - `M1 = -(u^s + u)(g eta1 + q d_y eta1)`
/// - `M2 = 2 g_y eta2 + 2 g d_y eta2`
/// - `M3 = 2 eps g_x eta1`
/// - `M4 = d_y(q ((u^s + u) w_x + v (u^s_yy + w_y)) / D)`
/// - `M5 = -d_y(sum_i C(n,i) d_x^i u d_x^{n+1-i} u / D)`
/// - `M6 = -d_y(sum_i C(n,i) d_x^i w d_x^{n-i} v / D)`
///
/// with `q = d_y^{-1} g_n` and `D = u^s_y + u_y`. The quadratic `eta` terms cancel by the
/// product rule and are absent from `M2` and `M3`.
pub fn compute_m_terms(state: &SolverState, tf: &TransformFields, n: usize) -> Result<[Field2D; 6], TransformError> {
    if n > tf.m {
        return Err(TransformError::Order { n, m: tf.m });
    }
    let g = &tf.g[n];
    let q = &tf.ginv[n];
    let d = &tf.denom;
    let eps = state.eps;
    let speed = shear_plus(state, 0, &state.u);
    let gy = dy(g, 1)?;
    let gx = dx(g, 1)?;
    let eta1y = dy(&tf.eta1, 1)?;
    let eta2y = dy(&tf.eta2, 1)?;

    let m1 = -&(&speed * &(&(g * &tf.eta1) + &(q * &eta1y)));
    let m2 = (&(&gy * &tf.eta2) + &(g * &eta2y)).scale(2.0);
    let m3 = (&gx * &tf.eta1).scale(2.0 * eps);
    let wx = dx(&state.w, 1)?;
    let stretch = shear_plus(state, 2, &dy(&state.w, 1)?);
    let transport = &(&speed * &wx) + &(&state.v * &stretch);
    let m4 = dy(&(q * &transport).zip(d, |a, b| a / b), 1)?;
    let (mut a1, mut a2) = (Field2D::zeros(state.grid().clone()), Field2D::zeros(state.grid().clone()));
    for i in 1..=n {
        let c = binom(n, i);
        a1 = &a1 + &(&dx(&state.u, i)? * &dx(&state.u, n + 1 - i)?).scale(c);
        a2 = &a2 + &(&dx(&state.w, i)? * &dx(&state.v, n - i)?).scale(c);
    }
    let m5 = -&dy(&a1.zip(d, |a, b| a / b), 1)?;
    let m6 = -&dy(&a2.zip(d, |a, b| a / b), 1)?;
    Ok([m1, m2, m3, m4, m5, m6])
}

/// Left-hand side of the `g_n` equation minus `sum M_j`, without the time derivative.
fn g_operator(state: &SolverState, tf: &TransformFields, n: usize) -> Result<Field2D, TransformError> {
    let g = &tf.g[n];
    let speed = shear_plus(state, 0, &state.u);
    let mut lhs = &(&speed * &dx(g, 1)?) - &dy(g, 2)?;
    lhs = &lhs - &dx(g, 2)?.scale(state.eps);
    let qx = dx(&tf.ginv[n], 1)?;
    lhs = &lhs - &(&qx * &dy(&tf.eta1, 1)?).scale(2.0 * state.eps);
    for mj in compute_m_terms(state, tf, n)? {
        lhs = &lhs - &mj;
    }
    Ok(lhs)
}

/// `L^2_{ell'}` norm of the `g_n` equation residual between two states `dt` apart: the time
/// derivative is the difference quotient, the remaining terms the average over both states.
pub fn residual_g_equation(
    prev: &SolverState,
    next: &SolverState,
    n: usize,
    params: &SobolevParams,
    window: &MonotonicityWindow,
) -> Result<f64, TransformError> {
    let dt = next.t - prev.t;
    let tf0 = compute_transform(prev, params.m.max(n), window)?;
    let tf1 = compute_transform(next, params.m.max(n), window)?;
    let gt = (&tf1.g[n] - &tf0.g[n]).scale(1.0 / dt);
    let op = (&g_operator(prev, &tf0, n)? + &g_operator(next, &tf1, n)?).scale(0.5);
    Ok(norm_l2_weighted(&(&gt + &op), params.ell_prime))
}

/// `max_x |d_y g_n(x, 0)|`.
pub fn g_wall_slope(tf: &TransformFields, n: usize) -> Result<f64, TransformError> {
    Ok(dy(&tf.g[n], 1)?.row(0).iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

/// `d_x^m w = (u^s_yy + w_y) int_0^y g_m + (u^s_y + w) g_m`.
pub fn recover_top_derivative(tf: &TransformFields, state: &SolverState) -> Result<Field2D, TransformError> {
    let gm = &tf.g[tf.m];
    let q = integrate_y_from_0(gm);
    let dy_denom = shear_plus(state, 2, &dy(&state.w, 1)?);
    Ok(&(&dy_denom * &q) + &(&tf.denom * gm))
}

/// One row of the energy monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergySample {
    pub t: f64,
    #[serde(rename = "E_aniso")]
    pub e_aniso: f64,
    #[serde(rename = "E_g")]
    pub e_g: f64,
    #[serde(rename = "E_top")]
    pub e_top: f64,
    #[serde(rename = "D_aniso")]
    pub d_aniso: f64,
    #[serde(rename = "D_g")]
    pub d_g: f64,
    pub margin: f64,
    pub f_defect: f64,
    /// `eps ||d_x w||^2` and `eps sum ||d_x g_n||^2`.
    #[serde(skip)]
    pub d_eps: f64,
    #[serde(skip)]
    pub d_eps_g: f64,
    /// `||w||_{H^m_{k+ell}}`.
    #[serde(skip)]
    pub norm_hm: f64,
}

/// Energies at one state; the `g` columns are NaN outside the window.
pub fn energy_sample(
    state: &SolverState,
    params: &SobolevParams,
    window: &MonotonicityWindow,
    tail_rate: f64,
) -> Result<EnergySample, TransformError> {
    let m = params.m;
    let lambda = params.lambda();
    let w = &state.w;
    let e_aniso = anisotropic_breakdown(w, m, lambda)?.total;
    let wy = dy(w, 1)?;
    let d_aniso = anisotropic_breakdown(&wy, m, lambda)?.total;
    let d_eps = state.eps * anisotropic_breakdown(&dx(w, 1)?, m, lambda)?.total;
    let e_top = l2_weighted_sq(&dx(w, m)?, lambda);
    let norm_hm = norm_hm_weighted(w, m, lambda)?.norm();
    let (_, margin) = check_monotonicity(state, window);
    let (mut e_g, mut d_g, mut d_eps_g) = (f64::NAN, f64::NAN, f64::NAN);
    if margin >= 0.0 {
        let tf = compute_transform(state, m, window)?;
        let lp = params.ell_prime;
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for g in &tf.g[1..] {
            a += l2_weighted_sq(g, lp);
            b += l2_weighted_sq(&dy(g, 1)?, lp);
            c += l2_weighted_sq(&dx(g, 1)?, lp);
        }
        e_g = a;
        d_g = b;
        d_eps_g = state.eps * c;
    }
    Ok(EnergySample {
        t: state.t,
        e_aniso,
        e_g,
        e_top,
        d_aniso,
        d_g,
        margin,
        f_defect: boundary_consistency(state, tail_rate)?,
        d_eps,
        d_eps_g,
        norm_hm,
    })
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EnergyReport {
    pub samples: Vec<EnergySample>,
    /// `||u0||_{H^{m+1}_{k+ell'-1}}`, the reference size for `CT`.
    pub u0_norm: f64,
}

impl EnergyReport {
    pub fn push(&mut self, s: EnergySample) {
        self.samples.push(s);
    }

    /// CSV with columns `t, E_aniso, E_g, E_top, D_aniso, D_g, margin, f_defect`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TransformError> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            w.serialize(s)?;
        }
        if self.samples.is_empty() {
            w.write_record(["t", "E_aniso", "E_g", "E_top", "D_aniso", "D_g", "margin", "f_defect"])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `max_t E_top / E_g` over samples with `E_g > 0`.
    pub fn lemma_constant(&self) -> f64 {
        self.samples
            .iter()
            .filter(|s| s.e_g > 0.0)
            .map(|s| s.e_top / s.e_g)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallFit {
    /// Smallest `C1` with `dE_aniso/dt + D_aniso + eps D_x <= C1 (N^2 + N^m)`, `N = ||w||_{H^m}`.
    /// Not clipped at zero; NaN when no sample pair qualifies.
    pub c1: f64,
    /// Smallest `C2` with `dE_g/dt + D_g + eps D_gx <= C2 (E_g + N^2)`.
    pub c2: f64,
    /// `sup_t N(t) / ||u0||_{H^{m+1}_{k+ell'-1}}`.
    pub ct: f64,
    /// Set when the energies vanish and the fit is meaningless.
    pub degenerate: bool,
    pub samples: usize,
}

/// Envelope fit of the Gronwall constants over consecutive sample pairs.
pub fn gronwall_monitor(report: &EnergyReport, m: usize) -> GronwallFit {
    let s = &report.samples;
    let degenerate = s.iter().all(|p| p.e_aniso == 0.0 && p.e_g.abs() == 0.0) || s.len() < 2;
    if degenerate {
        return GronwallFit {
            c1: 0.0,
            c2: 0.0,
            ct: 0.0,
            degenerate: true,
            samples: s.len(),
        };
    }
    let mut c1 = f64::NEG_INFINITY;
    let mut c2 = f64::NEG_INFINITY;
    for pair in s.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let dt = b.t - a.t;
        if !(dt > 0.0) {
            continue;
        }
        let n = 0.5 * (a.norm_hm + b.norm_hm);
        let avg = |f: fn(&EnergySample) -> f64| 0.5 * (f(a) + f(b));
        let lhs1 = (b.e_aniso - a.e_aniso) / dt + avg(|p| p.d_aniso + p.d_eps);
        let rhs1 = n * n + n.powi(m as i32);
        if rhs1 > 0.0 {
            c1 = c1.max(lhs1 / rhs1);
        }
        if a.e_g.is_finite() && b.e_g.is_finite() {
            let lhs2 = (b.e_g - a.e_g) / dt + avg(|p| p.d_g + p.d_eps_g);
            let rhs2 = avg(|p| p.e_g) + n * n;
            if rhs2 > 0.0 {
                c2 = c2.max(lhs2 / rhs2);
            }
        }
    }
    let finite = |c: f64| if c == f64::NEG_INFINITY { f64::NAN } else { c };
    let (c1, c2) = (finite(c1), finite(c2));
    let sup = s.iter().map(|p| p.norm_hm).fold(0.0, f64::max);
    let ct = if report.u0_norm > 0.0 { sup / report.u0_norm } else { 0.0 };
    GronwallFit {
        c1,
        c2,
        ct,
        degenerate: false,
        samples: s.len(),
    }
}

/// `(max - min) / mean` of a set of fitted constants.
pub fn relative_spread(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if mean == 0.0 {
        0.0
    } else {
        (max - min) / mean.abs()
    }
}
