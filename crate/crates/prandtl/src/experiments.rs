//! Run configuration, manifests and the sweep experiments driven by the CLI.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compat::{BoundaryJet, CompatError};
use crate::grid::{dy, japanese, Field2D, Grid, GridError, GridSpec};
use crate::shear::{ShearError, ShearEvolution, ShearProfile};
use crate::solver::{corrected_vorticity, run, InitialData, RunResult, Scheme, Solver, SolverConfig, SolverError, SolverState};
use crate::spaces::{norm_hm_weighted, NormError, SobolevParams};
use crate::transform::{estimate_cm, gronwall_monitor, relative_spread, GronwallFit, MonotonicityWindow, TransformError};

mod verify;
pub use verify::{cmd_verify, Cmp, Verdict, VerifyReport, SUITES};

pub const SCHEMA_VERSION: u32 = 1;
/// Highest wall derivative carried by the experiment datum.
const DATUM_JET: usize = 12;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Shear(#[from] ShearError),
    #[error(transparent)]
    Compat(#[from] CompatError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub params: SobolevParams,
    #[serde(default = "default_k")]
    pub shear_k: f64,
    pub eps: f64,
    /// `||w0||_{H^m_{k+ell}}` of the perturbation.
    pub delta0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Amplitudes for `lifespan`.
    #[serde(default)]
    pub delta0_list: Vec<f64>,
    /// Regularizations for `sweep-eps`.
    #[serde(default)]
    pub eps_list: Vec<f64>,
    /// Relative gap between the two data of `stability`.
    #[serde(default = "default_gap")]
    pub stability_gap: f64,
    /// Horizon cap of `lifespan`.
    #[serde(default = "default_cap")]
    pub lifespan_cap: f64,
    #[serde(default)]
    pub strict: bool,
}

fn default_k() -> f64 {
    3.0
}
fn default_gap() -> f64 {
    1e-4
}
fn default_cap() -> f64 {
    64.0
}

impl RunConfig {
    /// Reference configuration: `delta0 = 1e-3`, `k = 3`, `eps = 1e-3`, `T = 1`.
    pub fn reference() -> Self {
        RunConfig {
            grid: GridSpec::new(32, 128, 20.0),
            params: SobolevParams::default(),
            shear_k: 3.0,
            eps: 1e-3,
            delta0: 1e-3,
            t_end: 1.0,
            solver: SolverConfig::default(),
            seed: 0,
            out_dir: None,
            delta0_list: vec![1e-2, 1e-3, 1e-4, 1e-5],
            eps_list: vec![1e-2, 1e-3, 1e-4],
            stability_gap: 1e-4,
            lifespan_cap: 64.0,
            strict: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Read {
            path: path.to_owned(),
            source,
        })?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|source| ExperimentError::Parse {
            path: path.to_owned(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.params.validate(self.strict)?;
        self.solver.validate()?;
        if (self.params.k - self.shear_k).abs() > 0.0 {
            return Err(ExperimentError::Config(format!(
                "shear_k = {} differs from params.k = {}",
                self.shear_k, self.params.k
            )));
        }
        if !(self.eps >= 0.0 && self.eps <= 1.0) {
            return Err(ExperimentError::Config(format!("eps = {} must lie in [0, 1]", self.eps)));
        }
        if !(self.delta0 >= 0.0) || !(self.t_end > 0.0) {
            return Err(ExperimentError::Config("delta0 must be >= 0 and T > 0".into()));
        }
        Grid::new(self.grid)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Wall profile `P(y) = y^5 e^{-y^2}`: its Taylor series is odd and starts at `y^5`.
pub fn datum_profile(y: f64) -> f64 {
    y.powi(5) * (-y * y).exp()
}

/// `P'(y) = (5 y^4 - 2 y^6) e^{-y^2}`.
pub fn datum_profile_dy(y: f64) -> f64 {
    (5.0 * y.powi(4) - 2.0 * y.powi(6)) * (-y * y).exp()
}

/// `d^j P(0)`: `(-1)^i j! / i!` for `j = 2i + 5`, zero otherwise.
fn datum_jet_coeff(j: usize) -> f64 {
    if j < 5 || (j - 5) % 2 == 1 {
        return 0.0;
    }
    let i = (j - 5) / 2;
    let fact = |n: usize| (1..=n).fold(1.0, |a, b| a * b as f64);
    let s = if i.is_multiple_of(2) { 1.0 } else { -1.0 };
    s * fact(j) / fact(i)
}

/// `u0 = a sin(x) P(y)` with its exact wall jet.
pub fn sine_datum(grid: &Arc<Grid>, a: f64) -> InitialData {
    let u0 = Field2D::from_fn(grid.clone(), |x, y| a * x.sin() * datum_profile(y));
    let sx: Vec<f64> = grid.x().iter().map(|x| x.sin()).collect();
    let orders = (0..=DATUM_JET)
        .map(|j| sx.iter().map(|s| a * s * datum_jet_coeff(j)).collect())
        .collect();
    InitialData {
        u0,
        jet: Some(BoundaryJet::new(grid.clone(), orders)),
    }
}

/// `||d_y (sin(x) P(y))||_{H^m_{k+ell}}`, with the vorticity sampled exactly.
pub fn datum_unit_norm(grid: &Arc<Grid>, params: &SobolevParams) -> Result<f64, NormError> {
    let w = Field2D::from_fn(grid.clone(), |x, y| x.sin() * datum_profile_dy(y));
    Ok(norm_hm_weighted(&w, params.m, params.lambda())?.norm())
}

/// The experiment datum scaled to `||w0||_{H^m_{k+ell}} = delta0`.
pub fn experiment_datum(grid: &Arc<Grid>, params: &SobolevParams, delta0: f64) -> Result<InitialData, ExperimentError> {
    let a = if delta0 == 0.0 { 0.0 } else { delta0 / datum_unit_norm(grid, params)? };
    Ok(sine_datum(grid, a))
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub code_version: String,
    pub command: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub cm: f64,
    pub zeta: f64,
    pub c_tilde1: f64,
    pub c_tilde2: f64,
    pub gronwall: Option<GronwallFit>,
    pub stop_reason: Option<String>,
    pub stop_time: Option<f64>,
    pub steps: usize,
    pub dt: f64,
    pub max_defect: f64,
    pub corrected: bool,
    pub compat_override: bool,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, cm: f64) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: cfg.clone(),
            config_hash: cfg.hash(),
            cm,
            zeta: f64::NAN,
            c_tilde1: f64::NAN,
            c_tilde2: f64::NAN,
            gronwall: None,
            stop_reason: None,
            stop_time: None,
            steps: 0,
            dt: 0.0,
            max_defect: 0.0,
            corrected: false,
            compat_override: cfg.solver.allow_incompatible,
            wall_time_s: 0.0,
        }
    }

    fn record_run(&mut self, r: &RunResult) {
        self.zeta = r.window.zeta;
        self.c_tilde1 = r.window.c_tilde1;
        self.c_tilde2 = r.window.c_tilde2;
        self.stop_reason = Some(r.stop.label().to_string());
        self.stop_time = Some(r.stop.time(r.t_end));
        self.steps = r.steps;
        self.dt = r.dt;
        self.max_defect = r.max_defect;
        self.corrected = r.corrected;
    }
}

/// Embedding constant for the configured grid and space, from 200 seeded random fields.
pub fn measured_cm(cfg: &RunConfig) -> Result<f64, ExperimentError> {
    if let Some(c) = cfg.solver.cm {
        return Ok(c);
    }
    let grid = Grid::new(cfg.grid)?;
    Ok(estimate_cm(&grid, &cfg.params, 200, cfg.seed)?)
}

fn solver_cfg(cfg: &RunConfig, cm: f64) -> SolverConfig {
    SolverConfig {
        cm: Some(cm),
        ..cfg.solver.clone()
    }
}

/// One run of the experiment datum with amplitude `delta0` and regularization `eps`.
pub fn run_datum(cfg: &RunConfig, cm: f64, delta0: f64, eps: f64, t_end: f64, horizon: Option<f64>) -> Result<RunResult, ExperimentError> {
    let grid = Grid::new(cfg.grid)?;
    let profile = ShearProfile::builtin(cfg.shear_k, cfg.params.m)?;
    let data = experiment_datum(&grid, &cfg.params, delta0)?;
    let mut sc = solver_cfg(cfg, cm);
    sc.horizon = horizon.or(sc.horizon);
    Ok(run(&sc, &data, &profile, eps, t_end, &cfg.params)?)
}

/// `run`: the reference pipeline with manifest and energy CSV.
pub fn cmd_run(cfg: &RunConfig) -> Result<(RunResult, Manifest), ExperimentError> {
    let start = Instant::now();
    let cm = measured_cm(cfg)?;
    let r = run_datum(cfg, cm, cfg.delta0, cfg.eps, cfg.t_end, None)?;
    let mut man = Manifest::new("run", cfg, cm);
    man.record_run(&r);
    man.gronwall = Some(gronwall_monitor(&r.energy, cfg.params.m));
    man.wall_time_s = start.elapsed().as_secs_f64();
    Ok((r, man))
}

#[derive(Debug, Clone, Serialize)]
pub struct LifespanRow {
    pub delta0: f64,
    /// Largest horizon whose run completes without a stop.
    pub t_star: f64,
    /// Stop reason at the first failing horizon, or the cap flag.
    pub reason: String,
    pub unbounded: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LifespanReport {
    pub rows: Vec<LifespanRow>,
    /// Least-squares line `T* = a + b log(1/delta0)` over bounded rows.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub cm: f64,
}

/// Per-step quantities of one trajectory that the horizon-dependent stop test needs:
/// `min` and `max` of `(u^s_y + u_y) <y>^k` and the `H^m_{k+ell}` norm.
#[derive(Debug, Clone, Copy)]
struct Probe {
    t: f64,
    lo: f64,
    hi: f64,
    norm: f64,
}

fn probe(state: &SolverState, params: &SobolevParams) -> Result<Probe, ExperimentError> {
    let g = state.grid();
    let ny = g.ny();
    let usy = state.shear.deriv(1);
    let weight: Vec<f64> = g.y().iter().map(|&y| japanese(y, state.shear.k)).collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (idx, &w) in state.w.values().iter().enumerate() {
        let r = (usy[idx % ny] + w) * weight[idx % ny];
        lo = lo.min(r);
        hi = hi.max(r);
    }
    let norm = norm_hm_weighted(&state.w, params.m, params.lambda())?.norm();
    Ok(Probe { t: state.t, lo, hi, norm })
}

/// `T*(delta0)`. The trajectory does not depend on the horizon `H`, only the window constants
/// and `zeta` do, so one run to the cap is probed and `T*` is the last sample time `H` such
/// that every sample up to `H` passes the test built with horizon `H`.
pub fn lifespan(cfg: &RunConfig, cm: f64, delta0: f64) -> Result<LifespanRow, ExperimentError> {
    let cap = cfg.lifespan_cap;
    let grid = Grid::new(cfg.grid)?;
    let profile = ShearProfile::builtin(cfg.shear_k, cfg.params.m)?;
    let data = experiment_datum(&grid, &cfg.params, delta0)?;
    let (w0, _, _) = corrected_vorticity(&data, &profile, cfg.eps)?;
    let mut solver = Solver::new(grid.clone(), profile.clone(), cfg.eps, cfg.solver.clone(), cap)?;
    let mut state = solver.state(0.0, w0)?;
    let dt = solver.stable_dt(&state);
    let steps = (cap / dt).ceil() as usize;
    let dt = cap / steps as f64;
    let mut probes = vec![probe(&state, &cfg.params)?];
    for _ in 0..steps {
        state = solver.step_imex(&state, dt)?;
        probes.push(probe(&state, &cfg.params)?);
    }
    let (mut lo, mut hi, mut norm) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    let mut t_star = 0.0;
    for p in &probes {
        lo = lo.min(p.lo);
        hi = hi.max(p.hi);
        norm = norm.max(p.norm);
        let shear = ShearEvolution::new(&profile, 0.0, &[0.0], 1, p.t.max(f64::MIN_POSITIVE))?;
        let win = MonotonicityWindow::new(&shear, cm, cfg.solver.zeta);
        let reason = if lo < 0.25 * win.c_tilde1 || hi > 4.0 * win.c_tilde2 {
            Some("monotonicity violated")
        } else if norm > win.zeta {
            Some("norm exceeds zeta")
        } else {
            None
        };
        if let Some(r) = reason {
            return Ok(LifespanRow {
                delta0,
                t_star,
                reason: r.into(),
                unbounded: false,
            });
        }
        t_star = p.t;
    }
    Ok(LifespanRow {
        delta0,
        t_star: cap,
        reason: "unbounded at resolution".into(),
        unbounded: true,
    })
}

/// Ordinary least squares `y = a + b x`; returns `(b, a, R^2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    if x.len() < 2 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let b = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (b, my - b * mx, r2)
}

pub fn cmd_lifespan(cfg: &RunConfig) -> Result<LifespanReport, ExperimentError> {
    let list = &cfg.delta0_list;
    if list.is_empty() || list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ExperimentError::Config("delta0_list must be non-empty and decreasing".into()));
    }
    let cm = measured_cm(cfg)?;
    let rows = list
        .par_iter()
        .map(|&d| lifespan(cfg, cm, d))
        .collect::<Result<Vec<_>, _>>()?;
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| !r.unbounded && r.delta0 > 0.0)
        .map(|r| ((1.0 / r.delta0).ln(), r.t_star))
        .unzip();
    let (slope, intercept, r_squared) = linear_fit(&x, &y);
    Ok(LifespanReport {
        rows,
        slope,
        intercept,
        r_squared,
        cm,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRow {
    pub gap: f64,
    /// `sup_t ||u1 - u2|| / ||u1(0) - u2(0)||` in `L^2_{k+ell'-1}`.
    pub ratio: f64,
    pub stops: [String; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    /// `|R(gap/10) / R(gap) - 1|`.
    pub relative_change: f64,
}

/// Norm used for solution distances: the lowest-order weighted `L^2` of `u`.
fn distance_norm(f: &Field2D, params: &SobolevParams) -> f64 {
    crate::spaces::norm_l2_weighted(f, params.k + params.ell_prime - 1.0)
}

/// `sup_t D(t) / D(0)` for two runs sampled at the same times.
pub fn trajectory_ratio(a: &RunResult, b: &RunResult, params: &SobolevParams) -> f64 {
    let d0 = distance_norm(&(&a.states[0].u - &b.states[0].u), params);
    if d0 == 0.0 {
        return 0.0;
    }
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| distance_norm(&(&x.u - &y.u), params) / d0)
        .fold(0.0, f64::max)
}

/// Step size shared by runs that must be sampled at the same times: 99% of the stable step
/// of the datum with amplitude `delta0`.
pub fn common_dt(cfg: &RunConfig, delta0: f64) -> Result<f64, ExperimentError> {
    let grid = Grid::new(cfg.grid)?;
    let profile = ShearProfile::builtin(cfg.shear_k, cfg.params.m)?;
    let data = experiment_datum(&grid, &cfg.params, delta0)?;
    let solver = Solver::new(grid.clone(), profile, cfg.eps, cfg.solver.clone(), cfg.t_end)?;
    let st = solver.state(0.0, dy(&data.u0, 1)?)?;
    Ok(0.99 * solver.stable_dt(&st))
}

/// Second datum of a stability pair: `data + gap delta0 cos(2x) P(y) / |P|`.
pub fn perturbed_datum(grid: &Arc<Grid>, params: &SobolevParams, data: &InitialData, delta0: f64, gap: f64) -> Result<InitialData, ExperimentError> {
    let a = delta0 * gap / datum_unit_norm(grid, params)?;
    let mut out = data.clone();
    out.u0 = &out.u0 + &Field2D::from_fn(grid.clone(), |x, y| a * (2.0 * x).cos() * datum_profile(y));
    if let Some(j) = &mut out.jet {
        for (o, line) in j.orders.iter_mut().enumerate() {
            for (v, x) in line.iter_mut().zip(grid.x()) {
                *v += a * (2.0 * x).cos() * datum_jet_coeff(o);
            }
        }
    }
    Ok(out)
}

/// Paired runs whose data differ by `gap` and by `gap / 10` (relative to `delta0`).
pub fn cmd_stability(cfg: &RunConfig) -> Result<StabilityReport, ExperimentError> {
    let cm = measured_cm(cfg)?;
    let grid = Grid::new(cfg.grid)?;
    let profile = ShearProfile::builtin(cfg.shear_k, cfg.params.m)?;
    let mut sc = solver_cfg(cfg, cm);
    sc.dt = common_dt(cfg, cfg.delta0)?;
    let base = experiment_datum(&grid, &cfg.params, cfg.delta0)?;
    let r1 = run(&sc, &base, &profile, cfg.eps, cfg.t_end, &cfg.params)?;
    let rows = [cfg.stability_gap, cfg.stability_gap / 10.0]
        .par_iter()
        .map(|&gap| {
            let other = perturbed_datum(&grid, &cfg.params, &base, cfg.delta0, gap)?;
            let r2 = run(&sc, &other, &profile, cfg.eps, cfg.t_end, &cfg.params)?;
            Ok(StabilityRow {
                gap,
                ratio: trajectory_ratio(&r1, &r2, &cfg.params),
                stops: [r1.stop.label().to_string(), r2.stop.label().to_string()],
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let relative_change = (rows[1].ratio / rows[0].ratio - 1.0).abs();
    Ok(StabilityReport { rows, relative_change })
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsRow {
    pub eps: f64,
    pub stop: String,
    pub fit: GronwallFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsSweepReport {
    pub rows: Vec<EpsRow>,
    /// `||w_{eps_i}(T) - w_{eps_{i+1}}(T)||_{L^2_{k+ell}}`.
    pub distances: Vec<f64>,
    pub spread_c1: f64,
    pub spread_c2: f64,
    pub cauchy: bool,
}

pub fn cmd_sweep_eps(cfg: &RunConfig) -> Result<EpsSweepReport, ExperimentError> {
    let list = &cfg.eps_list;
    if list.len() < 3 {
        return Err(ExperimentError::Config(format!("eps_list needs at least 3 values, got {}", list.len())));
    }
    if list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ExperimentError::Config("eps_list must be decreasing".into()));
    }
    let cm = measured_cm(cfg)?;
    let mut c = cfg.clone();
    c.solver.dt = common_dt(cfg, cfg.delta0)?;
    let results = list
        .par_iter()
        .map(|&e| run_datum(&c, cm, c.delta0, e, c.t_end, None))
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    let mut finals = Vec::new();
    for (e, r) in list.iter().zip(results) {
        let r = r?;
        rows.push(EpsRow {
            eps: *e,
            stop: r.stop.label().to_string(),
            fit: gronwall_monitor(&r.energy, cfg.params.m),
        });
        finals.push(r.final_state().w.clone());
    }
    let lambda = cfg.params.lambda();
    let distances: Vec<f64> = finals
        .windows(2)
        .map(|p| crate::spaces::norm_l2_weighted(&(&p[0] - &p[1]), lambda))
        .collect();
    let cauchy = distances.windows(2).all(|d| d[1] < d[0]) || distances.iter().all(|&d| d == 0.0);
    let c1: Vec<f64> = rows.iter().map(|r| r.fit.c1).collect();
    let c2: Vec<f64> = rows.iter().map(|r| r.fit.c2).collect();
    Ok(EpsSweepReport {
        spread_c1: relative_spread(&c1),
        spread_c2: relative_spread(&c2),
        rows,
        distances,
        cauchy,
    })
}

/// Vorticity of the experiment datum, for inspection.
pub fn datum_vorticity(cfg: &RunConfig) -> Result<Field2D, ExperimentError> {
    let grid = Grid::new(cfg.grid)?;
    let d = experiment_datum(&grid, &cfg.params, cfg.delta0)?;
    Ok(dy(&d.u0, 1)?)
}

pub fn is_picard(cfg: &RunConfig) -> bool {
    cfg.solver.scheme == Scheme::Picard
}
