//! Compatibility conditions at the wall for the original and regularized systems, the
//! initial-data corrector, and a solver-based oracle for orders without closed forms.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{dy, Field2D, Grid, GridError};
use crate::shear::ShearProfile;

/// Default tolerance for closed-form residuals.
pub const COMPAT_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CompatError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("boundary jet carries orders 0..={have}, need {need}")]
    JetTooShort { have: usize, need: usize },
    #[error("corrector leaves residual {residual:e} at order {order}")]
    CorrectorFailure { order: usize, residual: f64 },
    #[error("corrector order {order} must be even, >= 6 and at most {max}")]
    CorrectorOrder { order: usize, max: usize },
    #[error("shear profile lacks derivative order {0}")]
    ShearOrder(usize),
    #[error("solver: {0}")]
    Solver(String),
}

/// `C^inf` cutoff: 1 on `[0, 1]`, 0 on `[2, inf)`, built from `e^{-1/s}`.
pub fn cutoff(y: f64) -> f64 {
    let psi = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let a = psi(2.0 - y);
    a / (a + psi(y - 1.0))
}

/// Wall derivatives `orders[j][i] = d^j u / dy^j (x_i, 0)`; orders past the stored ones are zero.
#[derive(Debug, Clone)]
pub struct BoundaryJet {
    grid: Arc<Grid>,
    pub orders: Vec<Vec<f64>>,
}

impl BoundaryJet {
    pub fn new(grid: Arc<Grid>, orders: Vec<Vec<f64>>) -> Self {
        assert!(orders.iter().all(|o| o.len() == grid.nx()));
        BoundaryJet { grid, orders }
    }

    /// Jet of `cutoff(y) * sum_j orders[j] y^j / j!`; exact since the cutoff is 1 near the wall.
    pub fn to_field(&self) -> Field2D {
        let ny = self.grid.ny();
        let mut values = vec![0.0; self.grid.nx() * ny];
        for (j, &y) in self.grid.y().iter().enumerate() {
            let chi = cutoff(y);
            if chi == 0.0 {
                continue;
            }
            let mut pow = chi;
            for (o, line) in self.orders.iter().enumerate() {
                if o > 0 {
                    pow *= y / o as f64;
                }
                for i in 0..self.grid.nx() {
                    values[i * ny + j] += line[i] * pow;
                }
            }
        }
        Field2D::from_vec(self.grid.clone(), values)
    }

    /// Jet read off a sampled field with the one-sided wall stencils (accuracy set by the grid).
    pub fn from_field(f: &Field2D, max_order: usize) -> Result<Self, CompatError> {
        let orders = (0..=max_order)
            .map(|j| Ok(dy(f, j)?.row(0)))
            .collect::<Result<Vec<_>, GridError>>()?;
        Ok(BoundaryJet {
            grid: f.grid().clone(),
            orders,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn order(&self, j: usize) -> Vec<f64> {
        self.orders
            .get(j)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.grid.nx()])
    }

    fn need(&self, n: usize) -> Result<(), CompatError> {
        if self.orders.len() <= n {
            return Err(CompatError::JetTooShort {
                have: self.orders.len().saturating_sub(1),
                need: n,
            });
        }
        Ok(())
    }

    fn dxj(&self, j: usize, n: usize) -> Result<Vec<f64>, CompatError> {
        Ok(self.grid.dx_line(&self.order(j), n)?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompatReport {
    pub orders: Vec<usize>,
    pub residuals: Vec<f64>,
    pub tol: f64,
    pub pass: bool,
}

impl CompatReport {
    fn new(orders: Vec<usize>, residuals: Vec<f64>, tol: f64) -> Self {
        let pass = residuals.iter().all(|&r| r <= tol);
        CompatReport {
            orders,
            residuals,
            tol,
            pass,
        }
    }

    pub fn residual(&self, order: usize) -> Option<f64> {
        self.orders.iter().position(|&o| o == order).map(|i| self.residuals[i])
    }
}

fn l2x(grid: &Grid, line: &[f64]) -> f64 {
    (line.iter().map(|v| v * v).sum::<f64>() * grid.hx()).sqrt()
}

fn shear_at_wall(shear: &ShearProfile, n: usize) -> Result<Vec<f64>, CompatError> {
    if shear.max_order() < n {
        return Err(CompatError::ShearOrder(n));
    }
    Ok((0..=n).map(|p| shear.deriv(p, 0.0)).collect())
}

/// Pointwise order-4 residual `d^4 u - (u^s_y(0) + d u)(dx dy u)` at the wall.
pub fn order4_line(jet: &BoundaryJet, shear: &ShearProfile) -> Result<Vec<f64>, CompatError> {
    let s = shear_at_wall(shear, 1)?;
    let j1 = jet.order(1);
    let j1x = jet.dxj(1, 1)?;
    let j4 = jet.order(4);
    Ok((0..j1.len()).map(|i| j4[i] - (s[1] + j1[i]) * j1x[i]).collect())
}

/// Pointwise regularized order-6 residual at the wall; `eps = 0` gives the unregularized one.
pub fn order6_line(jet: &BoundaryJet, shear: &ShearProfile, eps: f64) -> Result<Vec<f64>, CompatError> {
    let s = shear_at_wall(shear, 4)?;
    let nx = jet.grid.nx();
    let jj: Vec<Vec<f64>> = (0..=6).map(|j| jet.order(j)).collect();
    let jx: Vec<Vec<f64>> = (0..=3).map(|j| jet.dxj(j, 1)).collect::<Result<_, _>>()?;
    let j1xx = jet.dxj(1, 2)?;
    let binom = [1.0, 4.0, 6.0, 4.0, 1.0];
    Ok((0..nx)
        .map(|i| {
            // d^j (u^s + u) and d^j (u^s_y + u_y) at the wall
            let full = |j: usize| s[j] + jj[j][i];
            let mut rhs = full(3) * jx[1][i] - 2.0 * eps * jx[1][i] * j1xx[i];
            for j in 1..=3 {
                rhs += binom[j] * (full(j) * jx[4 - j][i] - jx[j - 1][i] * full(5 - j));
            }
            jj[6][i] - rhs
        })
        .collect())
}

/// Residuals of orders 0, 2 and 4.
pub fn check_compat_order4(jet: &BoundaryJet, shear: &ShearProfile) -> Result<CompatReport, CompatError> {
    let g = jet.grid.clone();
    let r4 = order4_line(jet, shear)?;
    Ok(CompatReport::new(
        vec![0, 2, 4],
        vec![l2x(&g, &jet.order(0)), l2x(&g, &jet.order(2)), l2x(&g, &r4)],
        COMPAT_TOL,
    ))
}

/// Residuals of orders 0, 2, 4 and the eps-dependent order 6.
pub fn check_compat_order6_reg(jet: &BoundaryJet, shear: &ShearProfile, eps: f64) -> Result<CompatReport, CompatError> {
    let mut rep = check_compat_order4(jet, shear)?;
    let r6 = order6_line(jet, shear, eps)?;
    rep.orders.push(6);
    rep.residuals.push(l2x(&jet.grid, &r6));
    Ok(CompatReport::new(rep.orders, rep.residuals, COMPAT_TOL))
}

/// Time-Taylor expansion of the regularized equation at the wall.
///
/// With `u = sum_{q,j} c[q][j] t^q y^j`, the equation
/// `u_t = u_yy + eps u_xx - (u^s + u) u_x - v (u^s_y + u_y)`, `v = -int_0^y u_x`, with
/// `u^s_t = u^s_yy` fixes `c[q+1]` from `c[0..=q]`. The order-`2p` wall condition is
/// `d_t^{p-1} d_y^2 u (t = 0, y = 0) = 0`, returned normalized so its `d_y^{2p} u` coefficient is 1.
pub fn series_residuals(
    jet: &BoundaryJet,
    shear: &ShearProfile,
    eps: f64,
    max_order: usize,
) -> Result<Vec<(usize, Vec<f64>)>, CompatError> {
    let p_top = max_order / 2;
    let deg = 2 * p_top + 2;
    let grid = jet.grid.clone();
    let nx = grid.nx();
    let s = shear_at_wall(shear, deg + 2 * p_top)?;
    let fact = |n: usize| (1..=n).fold(1.0, |a, b| a * b as f64);
    let zero = vec![0.0; nx];
    // shear coefficients: t^q y^j -> s_{j+2q} / (q! j!)
    let shear_c = |q: usize, j: usize| s[j + 2 * q] / (fact(q) * fact(j));

    let mut c: Vec<Vec<Vec<f64>>> = vec![(0..=deg)
        .map(|j| jet.order(j).iter().map(|v| v / fact(j)).collect())
        .collect()];
    for q in 0..p_top.saturating_sub(1) {
        let dxl = |v: &Vec<f64>, n: usize| grid.dx_line(v, n);
        let ux: Vec<Vec<Vec<f64>>> = c.iter().map(|cq| cq.iter().map(|l| dxl(l, 1)).collect()).collect::<Result<_, _>>()?;
        let uxx: Vec<Vec<f64>> = c[q].iter().map(|l| dxl(l, 2)).collect::<Result<_, _>>()?;
        let mut next = vec![zero.clone(); deg + 1];
        for j in 0..=deg {
            let line = &mut next[j];
            if j + 2 <= deg {
                let f = ((j + 1) * (j + 2)) as f64;
                for i in 0..nx {
                    line[i] += f * c[q][j + 2][i];
                }
            }
            for i in 0..nx {
                line[i] += eps * uxx[j][i];
            }
            for q1 in 0..=q {
                let q2 = q - q1;
                for j1 in 0..=j {
                    let j2 = j - j1;
                    // -(u^s + u)_{q1,j1} (u_x)_{q2,j2}
                    let sc = shear_c(q1, j1);
                    for i in 0..nx {
                        line[i] -= (sc + c[q1][j1][i]) * ux[q2][j2][i];
                    }
                    // -v_{q1,j1} (u^s_y + u_y)_{q2,j2}, v_{.,j1} = -(u_x)_{.,j1-1} / j1
                    if j1 >= 1 && j2 < deg {
                        let f = (j2 + 1) as f64;
                        let sy = f * shear_c(q2, j2 + 1);
                        for i in 0..nx {
                            let v = -ux[q1][j1 - 1][i] / j1 as f64;
                            line[i] -= v * (sy + f * c[q2][j2 + 1][i]);
                        }
                    }
                }
            }
            for v in line.iter_mut() {
                *v /= (q + 1) as f64;
            }
        }
        c.push(next);
    }
    let mut out = vec![(0, c[0][0].clone())];
    for p in 1..=p_top {
        let scale = 2.0 * fact(p - 1);
        out.push((2 * p, c[p - 1][2].iter().map(|v| scale * v).collect()));
    }
    Ok(out)
}

/// The corrector `mu = cutoff(y) sum_{p=3}^{order/2} mu^{2p}(x) y^{2p} / (2p)!`.
#[derive(Debug, Clone)]
pub struct Corrector {
    pub mu: Field2D,
    /// `(2p, mu^{2p})` pairs.
    pub coefficients: Vec<(usize, Vec<f64>)>,
}

impl Corrector {
    /// Jet of `u0 + eps mu`.
    pub fn apply_to_jet(&self, jet: &BoundaryJet, eps: f64) -> BoundaryJet {
        let mut j = jet.clone();
        for (o, line) in &self.coefficients {
            while j.orders.len() <= *o {
                j.orders.push(vec![0.0; j.grid.nx()]);
            }
            for (a, b) in j.orders[*o].iter_mut().zip(line) {
                *a += eps * b;
            }
        }
        j
    }
}

/// Build the corrector through `order` (even, `6 <= order <= max_order`).
///
/// The order-6 datum is `mu^6 = -2 (dx dy u0)(dy dx^2 u0)` at the wall. Higher coefficients
/// cancel, one order at a time, the part of the time-Taylor wall residual of `u0 + eps mu`
/// that the regularization adds to the residual of `u0` itself; for compatible `u0` that is
/// the whole residual.
pub fn build_corrector(
    jet: &BoundaryJet,
    shear: &ShearProfile,
    eps: f64,
    order: usize,
    max_order: usize,
) -> Result<Corrector, CompatError> {
    if !order.is_multiple_of(2) || order < 6 || order > max_order {
        return Err(CompatError::CorrectorOrder { order, max: max_order });
    }
    jet.need(1)?;
    let grid = jet.grid.clone();
    let j1x = jet.dxj(1, 1)?;
    let j1xx = jet.dxj(1, 2)?;
    let mu6: Vec<f64> = j1x.iter().zip(&j1xx).map(|(a, b)| -2.0 * a * b).collect();
    let mut corr = Corrector {
        mu: Field2D::zeros(grid.clone()),
        coefficients: vec![(6, mu6)],
    };
    if eps > 0.0 {
        // coefficients of order >= 8 cancel the eps-induced part of the series residual
        let base = series_residuals(jet, shear, 0.0, order)?;
        for o in (8..=order).step_by(2) {
            let current = corr.apply_to_jet(jet, eps);
            let res = series_residuals(&current, shear, eps, o)?;
            let r = &res.last().unwrap().1;
            let r0 = &base[o / 2].1;
            corr.coefficients
                .push((o, r.iter().zip(r0).map(|(v, v0)| -(v - v0) / eps).collect()));
        }
        let fin = corr.apply_to_jet(jet, eps);
        let scale = |o: usize| 1.0 + l2x(&grid, &fin.order(o));
        let d6: Vec<f64> = order6_line(&fin, shear, eps)?
            .iter()
            .zip(&order6_line(jet, shear, 0.0)?)
            .map(|(a, b)| a - b)
            .collect();
        let r = l2x(&grid, &d6);
        if r > COMPAT_TOL * scale(6) {
            return Err(CompatError::CorrectorFailure { order: 6, residual: r });
        }
        if order >= 8 {
            let res = series_residuals(&fin, shear, eps, order)?;
            for ((o, line), (_, line0)) in res.iter().zip(&base).skip(4) {
                let d: Vec<f64> = line.iter().zip(line0).map(|(a, b)| a - b).collect();
                let r = l2x(&grid, &d);
                if r > COMPAT_TOL * scale(*o) {
                    return Err(CompatError::CorrectorFailure { order: *o, residual: r });
                }
            }
        }
    }
    let mut orders = vec![vec![0.0; grid.nx()]; order + 1];
    for (o, line) in &corr.coefficients {
        orders[*o] = line.clone();
    }
    corr.mu = BoundaryJet::new(grid, orders).to_field();
    Ok(corr)
}

/// Overwrite the even wall derivatives `4, 6, ..., max_order` of `jet` so the conditions of
/// the equation with regularization `eps` hold through `max_order`; orders 0 and 2 are zeroed.
pub fn make_compatible(jet: &BoundaryJet, shear: &ShearProfile, eps: f64, max_order: usize) -> Result<BoundaryJet, CompatError> {
    let mut j = jet.clone();
    while j.orders.len() <= max_order {
        j.orders.push(vec![0.0; j.grid.nx()]);
    }
    j.orders[0].iter_mut().for_each(|v| *v = 0.0);
    j.orders[2].iter_mut().for_each(|v| *v = 0.0);
    for o in (4..=max_order).step_by(2) {
        let res = series_residuals(&j, shear, eps, o)?;
        let r = &res.last().unwrap().1;
        for (a, b) in j.orders[o].iter_mut().zip(r) {
            *a -= b;
        }
    }
    Ok(j)
}

/// Solver-based check at `order` (even). Takes 4 steps of size `dt` to absorb the start-up
/// projection onto the discrete wall condition, then 4 more, and returns the rate of change of
/// `d_y^order u(t, ., 0)` in `L^2(T)` over the second window. Compatible data keep it bounded as
/// `dt -> 0`; incompatible data make it blow up.
pub fn numeric_compat_oracle(u0eps: &Field2D, shear: &ShearProfile, eps: f64, order: usize, dt: f64) -> Result<f64, CompatError> {
    use crate::solver::{Solver, SolverConfig};
    const STEPS: usize = 4;
    if order < 2 || !order.is_multiple_of(2) || order - 1 > crate::grid::MAX_DY_ORDER {
        return Err(CompatError::Solver(format!("oracle order {order} must be even and in 2..={}", crate::grid::MAX_DY_ORDER + 1)));
    }
    let grid = u0eps.grid().clone();
    let cfg = SolverConfig {
        dt,
        ..SolverConfig::default()
    };
    let fail = |e: crate::solver::SolverError| CompatError::Solver(e.to_string());
    let mut solver = Solver::new(grid.clone(), shear.clone(), eps, cfg, 1.0).map_err(fail)?;
    let mut state = solver.state(0.0, dy(u0eps, 1)?).map_err(fail)?;
    let wall = |w: &Field2D| -> Result<Vec<f64>, GridError> { Ok(dy(w, order - 1)?.row(0)) };
    for _ in 0..STEPS {
        state = solver.step_imex(&state, dt).map_err(fail)?;
    }
    let (t1, start) = (state.t, wall(&state.w)?);
    for _ in 0..STEPS {
        state = solver.step_imex(&state, dt).map_err(fail)?;
    }
    let end = wall(&state.w)?;
    let sq: f64 = start.iter().zip(&end).map(|(a, b)| (b - a).powi(2)).sum();
    Ok((sq * grid.hx()).sqrt() / (state.t - t1))
}
