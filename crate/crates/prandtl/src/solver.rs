//! Time integration of the regularized vorticity system
//! `w_t + (u^s + u) w_x + v (u^s_yy + w_y) = w_yy + eps w_xx`, `w_y(x, 0) = 0`,
//! with `u = int_0^y w` and `v = -int_0^y u_x`.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compat::{build_corrector, check_compat_order4, BoundaryJet, CompatError, CompatReport};
use crate::grid::{dx, dy, integrate_y_from_0, integrate_y_to_inf, Field2D, Grid, GridError, GridSpec};
use crate::shear::{ShearError, ShearEvolution, ShearProfile};
use crate::spaces::{norm_hm_weighted, NormError, SobolevParams};
use crate::transform::{check_monotonicity, energy_sample, estimate_cm, EnergyReport, MonotonicityWindow, TransformError};

/// Shear derivatives kept alongside every state: `u^s` through `u^s_yyy`.
const SHEAR_ORDERS: usize = 3;
const CHECKPOINT_MAGIC: &str = "prandtl-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Shear(#[from] ShearError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Compat(#[from] CompatError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("implicit system for x-mode {mode} is singular")]
    LinearSolve { mode: usize },
    #[error("dt = {dt:e} exceeds the advective limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },
    #[error("boundary defect {defect:e} exceeds tolerance {tol:e}")]
    Consistency { defect: f64, tol: f64 },
    #[error("Picard iteration did not contract in {iters} iterations (last gaps {prev:e}, {last:e})")]
    NonContraction { iters: usize, prev: f64, last: f64 },
    #[error("non-finite vorticity at t = {0}")]
    Blowup(f64),
    #[error("initial data fail the compatibility check (residual {0:e})")]
    Incompatible(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImexEuler,
    Picard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Upper bound on the step; the CFL limit may shorten it.
    pub dt: f64,
    pub scheme: Scheme,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    /// Length of the sub-intervals the Picard scheme iterates over.
    pub picard_window: f64,
    pub boundary_tol: f64,
    pub cfl_safety: f64,
    /// Algebraic decay rate assumed for `w` past `Ymax` in tail integrals.
    pub tail_rate: f64,
    /// Record a state and an energy sample every this many steps.
    pub sample_every: usize,
    /// Perturbation-size threshold; `None` derives it from the window and the embedding constant.
    pub zeta: Option<f64>,
    /// Embedding constant; `None` estimates it on the run grid.
    pub cm: Option<f64>,
    /// Horizon for the envelope constants; `None` uses the run length.
    pub horizon: Option<f64>,
    /// Skip the monotonicity and `zeta` stops.
    pub ignore_window: bool,
    /// Run even when the order-4 compatibility check fails.
    pub allow_incompatible: bool,
    /// Drop the transport and stretching terms (diffusion only).
    pub advection: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 0.01,
            scheme: Scheme::ImexEuler,
            picard_tol: 1e-12,
            picard_max_iters: 30,
            picard_window: 0.05,
            boundary_tol: 1e-5,
            cfl_safety: 0.5,
            tail_rate: 4.0,
            sample_every: 1,
            zeta: None,
            cm: None,
            horizon: None,
            ignore_window: false,
            allow_incompatible: false,
            advection: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::Config(m));
        if !(self.dt > 0.0) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety < 1.0) {
            return bad(format!("cfl_safety = {} must lie in (0, 1)", self.cfl_safety));
        }
        if !(self.tail_rate > 1.0) {
            return bad(format!("tail_rate = {} must exceed 1", self.tail_rate));
        }
        if !(self.picard_window > 0.0) || self.picard_max_iters == 0 {
            return bad("Picard window and iteration cap must be positive".into());
        }
        if self.sample_every == 0 {
            return bad("sample_every must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub t: f64,
    pub w: Field2D,
    pub u: Field2D,
    pub v: Field2D,
    pub eps: f64,
    pub shear: ShearEvolution,
}

impl SolverState {
    pub fn grid(&self) -> &Arc<Grid> {
        self.w.grid()
    }

    /// `max |d_x u + d_y v|`.
    pub fn divergence(&self) -> Result<f64, GridError> {
        let ux = dx(&self.u, 1)?;
        let vy = dy(&self.v, 1)?;
        Ok((&ux + &vy).max_abs())
    }
}

/// `u = int_0^y w`, `v = -int_0^y u_x`.
pub fn reconstruct_uv(w: &Field2D) -> Result<(Field2D, Field2D), GridError> {
    let u = integrate_y_from_0(w);
    let v = -&integrate_y_from_0(&dx(&u, 1)?);
    Ok((u, v))
}

/// `f(x) = -int_0^inf w dy`.
pub fn boundary_defect(w: &Field2D, tail_rate: f64) -> Result<Vec<f64>, GridError> {
    let tail = integrate_y_to_inf(w, tail_rate)?;
    Ok((0..w.grid().nx()).map(|i| -tail.at(i, 0)).collect())
}

/// [`reconstruct_uv`] that refuses data whose defect exceeds `tol`.
pub fn reconstruct_uv_checked(w: &Field2D, tail_rate: f64, tol: f64) -> Result<(Field2D, Field2D), SolverError> {
    let defect = boundary_defect(w, tail_rate)?.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if defect > tol {
        return Err(SolverError::Consistency { defect, tol });
    }
    Ok(reconstruct_uv(w)?)
}

/// `max_x |f(t, x)|`.
pub fn boundary_consistency(state: &SolverState, tail_rate: f64) -> Result<f64, GridError> {
    Ok(boundary_defect(&state.w, tail_rate)?.iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

/// Source term added to the right-hand side, evaluated at the start of each step.
pub type Forcing = Arc<dyn Fn(f64) -> Field2D + Send + Sync>;

struct ImplicitCore {
    dt: f64,
    /// One factorization per `|k|`, indexed by `min(m, nx - m)`.
    lus: Vec<LU<f64, Dyn, Dyn>>,
}

/// Stepper for one grid, shear profile and regularization.
pub struct Solver {
    grid: Arc<Grid>,
    profile: ShearProfile,
    eps: f64,
    cfg: SolverConfig,
    horizon: f64,
    forcing: Option<Forcing>,
    core: Option<ImplicitCore>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PicardRecord {
    pub t0: f64,
    pub t1: f64,
    pub iterations: usize,
    /// `||w^n - w^{n-1}||` in `H^m_{k+ell}`, max over the sub-interval, per iteration.
    pub distances: Vec<f64>,
}

impl Solver {
    pub fn new(grid: Arc<Grid>, profile: ShearProfile, eps: f64, cfg: SolverConfig, horizon: f64) -> Result<Self, SolverError> {
        cfg.validate()?;
        if !(eps >= 0.0) {
            return Err(SolverError::Config(format!("eps = {eps} must be non-negative")));
        }
        Ok(Solver {
            grid,
            profile,
            eps,
            cfg,
            horizon,
            forcing: None,
            core: None,
        })
    }

    pub fn with_forcing(mut self, f: Forcing) -> Self {
        self.forcing = Some(f);
        self
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn profile(&self) -> &ShearProfile {
        &self.profile
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn shear_at(&self, t: f64) -> Result<ShearEvolution, ShearError> {
        ShearEvolution::new(&self.profile, t, self.grid.y(), SHEAR_ORDERS, self.horizon)
    }

    pub fn state(&self, t: f64, w: Field2D) -> Result<SolverState, SolverError> {
        if !w.is_finite() {
            return Err(SolverError::Blowup(t));
        }
        let (u, v) = reconstruct_uv(&w)?;
        Ok(SolverState {
            t,
            w,
            u,
            v,
            eps: self.eps,
            shear: self.shear_at(t)?,
        })
    }

    /// `h_x / max |u^s + u|`; infinite without transport.
    pub fn cfl_limit(&self, state: &SolverState) -> f64 {
        if !self.cfg.advection {
            return f64::INFINITY;
        }
        let ny = self.grid.ny();
        let us = state.shear.deriv(0);
        let speed = state
            .u
            .values()
            .iter()
            .enumerate()
            .map(|(idx, &u)| (us[idx % ny] + u).abs())
            .fold(0.0, f64::max);
        if speed == 0.0 {
            f64::INFINITY
        } else {
            self.grid.hx() / speed
        }
    }

    /// `min(cfg.dt, cfl_safety * cfl_limit)`.
    pub fn stable_dt(&self, state: &SolverState) -> f64 {
        self.cfg.dt.min(self.cfg.cfl_safety * self.cfl_limit(state))
    }

    /// Transport and stretching `(u^s + a) b_x + c (u^s_yy + d_y)` with `a, c` the velocity
    /// fields and `b, d` the vorticity fields they act on.
    fn transport(&self, state: &SolverState, u: &Field2D, v: &Field2D, wx_of: &Field2D, wy_of: &Field2D) -> Result<Field2D, GridError> {
        let ny = self.grid.ny();
        let us = state.shear.deriv(0);
        let usyy = state.shear.deriv(2);
        let wx = dx(wx_of, 1)?;
        let wy = dy(wy_of, 1)?;
        let vals = (0..u.values().len())
            .map(|idx| {
                let j = idx % ny;
                (us[j] + u.values()[idx]) * wx.values()[idx] + v.values()[idx] * (usyy[j] + wy.values()[idx])
            })
            .collect();
        Ok(Field2D::from_vec(self.grid.clone(), vals))
    }

    fn ensure_core(&mut self, dt: f64) -> Result<(), SolverError> {
        if self.core.as_ref().is_some_and(|c| c.dt == dt) {
            return Ok(());
        }
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let d1 = self.grid.dy_rows(1)?;
        let d2 = self.grid.dy_rows(2)?;
        let lus = (0..=nx / 2)
            .into_par_iter()
            .map(|m| {
                let k2 = self.grid.kx(m).powi(2);
                let mut a = DMatrix::<f64>::zeros(ny, ny);
                for (c, w) in d1[0].weights.iter().enumerate() {
                    a[(0, d1[0].start + c)] = *w;
                }
                for j in 1..ny - 1 {
                    let row = &d2[j];
                    for (c, w) in row.weights.iter().enumerate() {
                        a[(j, row.start + c)] -= dt * w;
                    }
                    a[(j, j)] += 1.0 + dt * self.eps * k2;
                }
                a[(ny - 1, ny - 1)] = 1.0;
                let lu = a.lu();
                if lu.is_invertible() {
                    Ok(lu)
                } else {
                    Err(SolverError::LinearSolve { mode: m })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.core = Some(ImplicitCore { dt, lus });
        Ok(())
    }

    /// Solve `(1 - dt (d_yy + eps d_xx)) w = rhs` with `w_y(0) = 0`, `w(Ymax) = 0`.
    fn implicit_solve(&mut self, rhs: &Field2D, dt: f64) -> Result<Field2D, SolverError> {
        self.ensure_core(dt)?;
        let core = self.core.as_ref().unwrap();
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut modes = self.grid.forward_x(rhs.values());
        modes.par_chunks_mut(ny).enumerate().try_for_each(|(m, line)| {
            let lu = &core.lus[m.min(nx - m)];
            let mut re = DVector::from_iterator(ny, line.iter().map(|c| c.re));
            let mut im = DVector::from_iterator(ny, line.iter().map(|c| c.im));
            re[0] = 0.0;
            im[0] = 0.0;
            re[ny - 1] = 0.0;
            im[ny - 1] = 0.0;
            if !(lu.solve_mut(&mut re) && lu.solve_mut(&mut im)) {
                return Err(SolverError::LinearSolve { mode: m });
            }
            for j in 0..ny {
                line[j] = Complex::new(re[j], im[j]);
            }
            Ok(())
        })?;
        Ok(Field2D::from_vec(self.grid.clone(), self.grid.inverse_x(&modes)))
    }

    fn explicit_part(&self, state: &SolverState, n: Option<Field2D>, dt: f64) -> Result<Field2D, SolverError> {
        let mut rhs = state.w.clone();
        if let Some(n) = n {
            rhs = &rhs - &n.scale(dt);
        }
        if let Some(f) = &self.forcing {
            rhs = &rhs + &f(state.t).scale(dt);
        }
        Ok(rhs)
    }

    fn check_cfl(&self, state: &SolverState, dt: f64) -> Result<(), SolverError> {
        let limit = self.cfl_limit(state);
        if dt > limit {
            return Err(SolverError::Cfl { dt, limit });
        }
        Ok(())
    }

    /// One IMEX Euler step: transport explicit at `t`, diffusion implicit at `t + dt`.
    pub fn step_imex(&mut self, state: &SolverState, dt: f64) -> Result<SolverState, SolverError> {
        self.check_cfl(state, dt)?;
        let n = if self.cfg.advection {
            Some(self.transport(state, &state.u, &state.v, &state.w, &state.w)?)
        } else {
            None
        };
        let rhs = self.explicit_part(state, n, dt)?;
        let w = self.implicit_solve(&rhs, dt)?;
        self.state(state.t + dt, w)
    }

    /// Picard iteration over `[t, t + t_len]` with `steps` IMEX sub-steps: each iterate
    /// solves the problem linearized about the previous trajectory.
    pub fn picard_advance(
        &mut self,
        state: &SolverState,
        t_len: f64,
        steps: usize,
        params: &SobolevParams,
    ) -> Result<(Vec<SolverState>, PicardRecord), SolverError> {
        let dt = t_len / steps as f64;
        let lambda = params.lambda();
        let mut prev: Vec<SolverState> = (0..=steps)
            .map(|s| {
                let mut st = state.clone();
                if s > 0 {
                    st.t = state.t + dt * s as f64;
                    st.shear = self.shear_at(st.t)?;
                }
                Ok(st)
            })
            .collect::<Result<_, SolverError>>()?;
        let mut distances = Vec::new();
        for it in 1..=self.cfg.picard_max_iters {
            let mut next = vec![state.clone()];
            let mut gap = 0.0f64;
            for s in 0..steps {
                let cur = &next[s];
                let lag = &prev[s];
                self.check_cfl(lag, dt)?;
                // (u^s + u^{n-1}) d_x w^n + (u^s_yy + d_y w^{n-1}) v^n
                let n = if self.cfg.advection {
                    Some(self.transport(lag, &lag.u, &cur.v, &cur.w, &lag.w)?)
                } else {
                    None
                };
                let mut base = cur.clone();
                base.shear = lag.shear.clone();
                let rhs = self.explicit_part(&base, n, dt)?;
                let w = self.implicit_solve(&rhs, dt)?;
                let mut st = self.state(state.t + dt * (s + 1) as f64, w)?;
                st.shear = prev[s + 1].shear.clone();
                gap = gap.max(norm_hm_weighted(&(&st.w - &prev[s + 1].w), params.m, lambda)?.norm());
                next.push(st);
            }
            distances.push(gap);
            prev = next;
            if gap <= self.cfg.picard_tol {
                let rec = PicardRecord {
                    t0: state.t,
                    t1: state.t + t_len,
                    iterations: it,
                    distances,
                };
                return Ok((prev, rec));
            }
        }
        let k = distances.len();
        Err(SolverError::NonContraction {
            iters: k,
            prev: if k >= 2 { distances[k - 2] } else { f64::NAN },
            last: distances[k - 1],
        })
    }
}

/// Closed form of the order-`m` Gronwall bound: the time `T` with
/// `(e^{-a C T / eps} - a (C/eps) T zeta_bar^{m-2})^{-1} = (4/3)^{m-2}`, `a = m/2 - 1`;
/// for `m = 2` this degenerates to `eps ln(4/3) / C`. Infinite when `C <= 0`.
pub fn gronwall_time(c: f64, eps: f64, m: usize, zeta_bar: f64) -> f64 {
    if !(c > 0.0) {
        return f64::INFINITY;
    }
    let r = c / eps;
    if m <= 2 {
        return (4.0f64 / 3.0).ln() / r;
    }
    let a = 0.5 * m as f64 - 1.0;
    let target = 0.75f64.powi(m as i32 - 2);
    let f = |t: f64| (-a * r * t).exp() - a * r * t * zeta_bar.powi(m as i32 - 2) - target;
    let mut hi = 1.0 / r;
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StopReason {
    ReachedT,
    MonotonicityViolated { t: f64, margin: f64 },
    NormExceedsZeta { t: f64, norm: f64, zeta: f64 },
}

impl StopReason {
    pub fn time(&self, t_end: f64) -> f64 {
        match *self {
            StopReason::ReachedT => t_end,
            StopReason::MonotonicityViolated { t, .. } | StopReason::NormExceedsZeta { t, .. } => t,
        }
    }
    pub fn label(&self) -> &'static str {
        match self {
            StopReason::ReachedT => "reached T",
            StopReason::MonotonicityViolated { .. } => "monotonicity violated",
            StopReason::NormExceedsZeta { .. } => "norm exceeds zeta",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Initial data for [`run`]: `u0` and, when known exactly, its wall jet.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub u0: Field2D,
    pub jet: Option<BoundaryJet>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub stop: StopReason,
    pub t_end: f64,
    pub dt: f64,
    pub steps: usize,
    /// Sampled states, the first at `t = 0`.
    pub states: Vec<SolverState>,
    pub energy: EnergyReport,
    /// `(t, ||w(t)||_{H^m_{k+ell}})` after every step.
    pub norms: Vec<(f64, f64)>,
    pub w0_norm: f64,
    pub max_defect: f64,
    pub max_divergence: f64,
    pub window: MonotonicityWindow,
    pub compat: Option<CompatReport>,
    pub corrected: bool,
    pub picard: Vec<PicardRecord>,
}

impl RunResult {
    pub fn sup_norm(&self) -> f64 {
        self.norms.iter().map(|p| p.1).fold(self.w0_norm, f64::max)
    }
    pub fn final_state(&self) -> &SolverState {
        self.states.last().unwrap()
    }
}

/// Vorticity `d_y(u0 + eps mu)` of the corrected data, with the compatibility report.
pub fn corrected_vorticity(
    data: &InitialData,
    profile: &ShearProfile,
    eps: f64,
) -> Result<(Field2D, Option<CompatReport>, bool), SolverError> {
    let Some(jet) = &data.jet else {
        return Ok((dy(&data.u0, 1)?, None, false));
    };
    let report = check_compat_order4(jet, profile)?;
    let mut u = data.u0.clone();
    let mut corrected = false;
    if eps > 0.0 && report.pass {
        let corr = build_corrector(jet, profile, eps, 6, 6)?;
        if corr.mu.max_abs() > 0.0 {
            u = &u + &corr.mu.scale(eps);
            corrected = true;
        }
    }
    Ok((dy(&u, 1)?, Some(report), corrected))
}

/// Integrate to `t_end` or until the window or the `zeta` threshold fails.
pub fn run(
    cfg: &SolverConfig,
    data: &InitialData,
    profile: &ShearProfile,
    eps: f64,
    t_end: f64,
    params: &SobolevParams,
) -> Result<RunResult, SolverError> {
    if !(t_end > 0.0) {
        return Err(SolverError::Config(format!("T = {t_end} must be positive")));
    }
    let grid = data.u0.grid().clone();
    let (w0, compat, corrected) = corrected_vorticity(data, profile, eps)?;
    if let Some(rep) = &compat {
        if !rep.pass && !cfg.allow_incompatible {
            let worst = rep.residuals.iter().copied().fold(0.0, f64::max);
            return Err(SolverError::Incompatible(worst));
        }
    }
    let horizon = cfg.horizon.unwrap_or(t_end);
    let mut solver = Solver::new(grid.clone(), profile.clone(), eps, cfg.clone(), horizon)?;
    let lambda = params.lambda();
    let mut state = solver.state(0.0, w0)?;
    let cm = match cfg.cm {
        Some(c) => c,
        None => estimate_cm(&grid, params, 200, 0)?,
    };
    let window = MonotonicityWindow::new(&state.shear, cm, cfg.zeta);
    let w0_norm = norm_hm_weighted(&state.w, params.m, lambda)?.norm();

    let dt0 = solver.stable_dt(&state);
    let steps = match cfg.scheme {
        Scheme::ImexEuler => (t_end / dt0).ceil() as usize,
        Scheme::Picard => {
            let wins = (t_end / cfg.picard_window).ceil() as usize;
            wins * (cfg.picard_window / dt0).ceil() as usize
        }
    };
    let dt = t_end / steps as f64;

    let mut result = RunResult {
        stop: StopReason::ReachedT,
        t_end,
        dt,
        steps: 0,
        states: vec![state.clone()],
        energy: EnergyReport::default(),
        norms: Vec::new(),
        w0_norm,
        max_defect: boundary_consistency(&state, cfg.tail_rate)?,
        max_divergence: state.divergence()?,
        window: window.clone(),
        compat,
        corrected,
        picard: Vec::new(),
    };
    result.energy.u0_norm = norm_hm_weighted(&data.u0, params.m + 1, params.k + params.ell_prime - 1.0)?.norm();
    result.energy.push(energy_sample(&state, params, &window, cfg.tail_rate)?);
    if let Some(stop) = stop_check(&state, &window, w0_norm, cfg) {
        result.stop = stop;
        return Ok(result);
    }

    let per_window = match cfg.scheme {
        Scheme::ImexEuler => 1,
        Scheme::Picard => steps / (t_end / cfg.picard_window).ceil() as usize,
    };
    while result.steps < steps {
        let batch: Vec<SolverState> = match cfg.scheme {
            Scheme::ImexEuler => vec![solver.step_imex(&state, dt)?],
            Scheme::Picard => {
                let (traj, rec) = solver.picard_advance(&state, dt * per_window as f64, per_window, params)?;
                result.picard.push(rec);
                traj.into_iter().skip(1).collect()
            }
        };
        for st in batch {
            result.steps += 1;
            let norm = norm_hm_weighted(&st.w, params.m, lambda)?.norm();
            if !norm.is_finite() {
                return Err(SolverError::Blowup(st.t));
            }
            result.norms.push((st.t, norm));
            result.max_defect = result.max_defect.max(boundary_consistency(&st, cfg.tail_rate)?);
            result.max_divergence = result.max_divergence.max(st.divergence()?);
            let stop = stop_check(&st, &window, norm, cfg);
            if result.steps.is_multiple_of(cfg.sample_every) || result.steps == steps || stop.is_some() {
                result.energy.push(energy_sample(&st, params, &window, cfg.tail_rate)?);
                result.states.push(st.clone());
            }
            state = st;
            if let Some(stop) = stop {
                result.stop = stop;
                return Ok(result);
            }
        }
    }
    Ok(result)
}

fn stop_check(state: &SolverState, window: &MonotonicityWindow, norm: f64, cfg: &SolverConfig) -> Option<StopReason> {
    if cfg.ignore_window {
        return None;
    }
    let (pass, margin) = check_monotonicity(state, window);
    if !pass {
        return Some(StopReason::MonotonicityViolated { t: state.t, margin });
    }
    if norm > window.zeta {
        return Some(StopReason::NormExceedsZeta {
            t: state.t,
            norm,
            zeta: window.zeta,
        });
    }
    None
}

/// Versioned text dump of `(t, eps, grid, w)`; floats are stored as IEEE bit patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub t: f64,
    pub eps: f64,
    pub spec: GridSpec,
    pub w: Vec<f64>,
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Result<f64, SolverError> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|e| SolverError::Checkpoint(format!("bad float {s:?}: {e}")))
}

impl Checkpoint {
    pub fn from_state(state: &SolverState) -> Self {
        Checkpoint {
            t: state.t,
            eps: state.eps,
            spec: *state.grid().spec(),
            w: state.w.values().to_vec(),
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), SolverError> {
        let s = &self.spec;
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(out, "t {}", hex(self.t))?;
        writeln!(out, "eps {}", hex(self.eps))?;
        writeln!(out, "grid {} {} {} {} {}", s.nx, hex(s.lx), s.ny, hex(s.ymax), hex(s.alpha))?;
        writeln!(out, "values {}", self.w.len())?;
        for v in &self.w {
            writeln!(out, "{}", hex(*v))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, SolverError> {
        let mut lines = input.lines();
        let mut next = |what: &str| -> Result<String, SolverError> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| SolverError::Checkpoint(format!("truncated before {what}")))
        };
        let head = next("header")?;
        let version = head
            .strip_prefix(CHECKPOINT_MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| SolverError::Checkpoint(format!("not a checkpoint: {head:?}")))?;
        if version != CHECKPOINT_VERSION {
            return Err(SolverError::Checkpoint(format!("unsupported version {version}")));
        }
        let field = |line: String, key: &str| -> Result<Vec<String>, SolverError> {
            let mut parts = line.split_whitespace().map(str::to_owned);
            if parts.next().as_deref() != Some(key) {
                return Err(SolverError::Checkpoint(format!("expected {key:?}, got {line:?}")));
            }
            Ok(parts.collect())
        };
        let parse_usize =
            |s: &str| s.parse::<usize>().map_err(|e| SolverError::Checkpoint(format!("bad integer {s:?}: {e}")));
        let t = unhex(&field(next("t")?, "t")?.join(""))?;
        let eps = unhex(&field(next("eps")?, "eps")?.join(""))?;
        let g = field(next("grid")?, "grid")?;
        if g.len() != 5 {
            return Err(SolverError::Checkpoint("grid line needs 5 entries".into()));
        }
        let spec = GridSpec {
            nx: parse_usize(&g[0])?,
            lx: unhex(&g[1])?,
            ny: parse_usize(&g[2])?,
            ymax: unhex(&g[3])?,
            alpha: unhex(&g[4])?,
        };
        let n = parse_usize(&field(next("values")?, "values")?.join(""))?;
        if n != spec.nx * spec.ny {
            return Err(SolverError::Checkpoint(format!("{n} values for a {}x{} grid", spec.nx, spec.ny)));
        }
        let w = (0..n).map(|_| unhex(next("value")?.trim())).collect::<Result<Vec<_>, _>>()?;
        Ok(Checkpoint { t, eps, spec, w })
    }

    pub fn save(&self, path: &Path) -> Result<(), SolverError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(f)
    }

    pub fn load(path: &Path) -> Result<Self, SolverError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Rebuild the state on `solver`, whose grid must match the stored one.
    pub fn restore(&self, solver: &Solver) -> Result<SolverState, SolverError> {
        if *solver.grid().spec() != self.spec {
            return Err(SolverError::Checkpoint("grid does not match the solver".into()));
        }
        if self.eps.to_bits() != solver.eps().to_bits() {
            return Err(SolverError::Checkpoint("eps does not match the solver".into()));
        }
        solver.state(self.t, Field2D::from_vec(solver.grid().clone(), self.w.clone()))
    }
}
