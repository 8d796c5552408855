#![allow(dead_code)]

use std::sync::Arc;

use prandtl::grid::{Field2D, Grid, GridSpec};
use prandtl::shear::ShearProfile;
use prandtl::solver::{Forcing, Solver, SolverConfig};
use prandtl::spaces::norm_l2_weighted;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn grid(nx: usize, ny: usize, ymax: f64) -> Arc<Grid> {
    Grid::new(GridSpec::new(nx, ny, ymax)).unwrap()
}

/// Random smooth field: low x-modes times decaying y-profiles, with closed-form y-derivative.
#[derive(Debug, Clone)]
pub struct SmoothField {
    /// (kx, phase, amplitude, decay, power)
    terms: Vec<(f64, f64, f64, f64, i32)>,
}

impl SmoothField {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..4);
        let terms = (0..n)
            .map(|_| {
                (
                    rng.gen_range(0..4) as f64,
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(0..3),
                )
            })
            .collect();
        SmoothField { terms }
    }

    /// `sum a cos(kx + phi) y^b e^{-c y}`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(k, ph, a, c, b)| a * (k * x + ph).cos() * y.powi(b) * (-c * y).exp())
            .sum()
    }

    pub fn dy(&self, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(k, ph, a, c, b)| {
                let poly = if b == 0 { 0.0 } else { b as f64 * y.powi(b - 1) };
                a * (k * x + ph).cos() * (poly - c * y.powi(b)) * (-c * y).exp()
            })
            .sum()
    }

    pub fn sample(&self, g: &Arc<Grid>) -> Field2D {
        Field2D::from_fn(g.clone(), |x, y| self.eval(x, y))
    }

    /// Variant vanishing at y = 0: multiply by (1 - e^{-y}).
    pub fn sample_vanishing(&self, g: &Arc<Grid>) -> Field2D {
        Field2D::from_fn(g.clone(), |x, y| -(-y).exp_m1() * self.eval(x, y))
    }
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

/// Independent oracle: Crank-Nicolson for `u_t = u_yy` on `[0, len]` with uniform spacing.
/// `dirichlet_at_0` selects `u(0) = 0`; otherwise `u_y(0) = 0`. The far end keeps its initial value.
pub struct HeatCn {
    pub h: f64,
    pub u: Vec<f64>,
}

impl HeatCn {
    pub fn new(u0: impl Fn(f64) -> f64, len: f64, h: f64) -> Self {
        let n = (len / h).round() as usize + 1;
        HeatCn {
            h,
            u: (0..n).map(|i| u0(i as f64 * h)).collect(),
        }
    }

    pub fn advance(&mut self, t: f64, dt: f64, dirichlet_at_0: bool) {
        let steps = (t / dt).round() as usize;
        let dt = t / steps as f64;
        let n = self.u.len();
        let r = dt / (self.h * self.h);
        // unknowns 0..n-1 (index 0 only when Neumann); last value fixed
        let first = if dirichlet_at_0 { 1 } else { 0 };
        let m = n - 1 - first;
        let mut a = vec![-0.5 * r; m];
        let b = vec![1.0 + r; m];
        let mut c = vec![-0.5 * r; m];
        if !dirichlet_at_0 {
            c[0] = -r; // ghost u_{-1} = u_1
        }
        a[0] = 0.0;
        let mut rhs = vec![0.0; m];
        for _ in 0..steps {
            for q in 0..m {
                let i = q + first;
                let left = if i == 0 { self.u[1] } else { self.u[i - 1] };
                let right = self.u[i + 1];
                rhs[q] = self.u[i] + 0.5 * r * (left - 2.0 * self.u[i] + right);
            }
            rhs[m - 1] += 0.5 * r * self.u[n - 1];
            if dirichlet_at_0 {
                rhs[0] += 0.5 * r * self.u[0];
            }
            // Thomas
            let mut cp = vec![0.0; m];
            let mut dp = vec![0.0; m];
            cp[0] = c[0] / b[0];
            dp[0] = rhs[0] / b[0];
            for q in 1..m {
                let den = b[q] - a[q] * cp[q - 1];
                cp[q] = c[q] / den;
                dp[q] = (rhs[q] - a[q] * dp[q - 1]) / den;
            }
            let mut x = vec![0.0; m];
            x[m - 1] = dp[m - 1];
            for q in (0..m - 1).rev() {
                x[q] = dp[q] - cp[q] * x[q + 1];
            }
            for q in 0..m {
                self.u[q + first] = x[q];
            }
        }
    }

    /// Cubic interpolation at `y`.
    pub fn at(&self, y: f64) -> f64 {
        let s = y / self.h;
        let i = (s.floor() as usize).clamp(1, self.u.len() - 3);
        let t = s - i as f64;
        let (p0, p1, p2, p3) = (self.u[i - 1], self.u[i], self.u[i + 1], self.u[i + 2]);
        p1 + 0.5 * t * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)))
    }
}

/// Steady or time-modulated manufactured vorticity `a(t) sin x q(y)`, `q = (1 - 2y^2) e^{-y^2}`.
pub struct Manufactured {
    pub a: fn(f64) -> f64,
    pub da: fn(f64) -> f64,
}

pub fn q0(y: f64) -> f64 {
    (1.0 - 2.0 * y * y) * (-y * y).exp()
}
pub fn q1(y: f64) -> f64 {
    (-6.0 * y + 4.0 * y.powi(3)) * (-y * y).exp()
}
pub fn q2(y: f64) -> f64 {
    (-6.0 + 24.0 * y * y - 8.0 * y.powi(4)) * (-y * y).exp()
}

impl Manufactured {
    pub fn w(&self, g: &Arc<Grid>, t: f64) -> Field2D {
        let a = (self.a)(t);
        Field2D::from_fn(g.clone(), |x, y| a * x.sin() * q0(y))
    }

    pub fn forcing(&self, g: &Arc<Grid>, eps: f64) -> Forcing {
        let g = g.clone();
        let (af, daf) = (self.a, self.da);
        let probe = Solver::new(g.clone(), ShearProfile::builtin(3.0, 2).unwrap(), eps, SolverConfig::default(), 1.0).unwrap();
        Arc::new(move |t: f64| {
            let sh = probe.shear_at(t).unwrap();
            let (us, usyy) = (sh.deriv(0).to_vec(), sh.deriv(2).to_vec());
            let (a, da) = (af(t), daf(t));
            let ny = g.ny();
            let mut vals = Vec::with_capacity(g.nx() * ny);
            for &x in g.x() {
                for (j, &y) in g.y().iter().enumerate() {
                    let (s, c) = x.sin_cos();
                    let ue = a * s * y * (-y * y).exp();
                    let ve = -a * c * 0.5 * (1.0 - (-y * y).exp());
                    let wt = da * s * q0(y);
                    let adv = (us[j] + ue) * a * c * q0(y) + ve * (usyy[j] + a * s * q1(y));
                    let diff = a * s * q2(y) - eps * a * s * q0(y);
                    vals.push(wt + adv - diff);
                }
            }
            Field2D::from_vec(g.clone(), vals)
        })
    }

    pub fn error(&self, ny: usize, dt: f64, t: f64, eps: f64) -> f64 {
        let g = grid(16, ny, 10.0);
        let mut s = Solver::new(g.clone(), ShearProfile::builtin(3.0, 2).unwrap(), eps, SolverConfig::default(), 1.0)
            .unwrap()
            .with_forcing(self.forcing(&g, eps));
        let st = s.state(0.0, self.w(&g, 0.0)).unwrap();
        let n = (t / dt).round() as usize;
        let st = (0..n).fold(st, |st, _| s.step_imex(&st, dt).unwrap());
        norm_l2_weighted(&(&st.w - &self.w(&g, st.t)), 0.0)
    }
}

pub fn order(e: &[f64], h: &[f64]) -> Vec<f64> {
    e.windows(2).zip(h.windows(2)).map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln()).collect()
}
