//! Self-checks behind the `verify` command.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{experiment_datum, measured_cm, run_datum, ExperimentError, RunConfig};
use crate::compat::{
    build_corrector, check_compat_order4, check_compat_order6_reg, make_compatible, numeric_compat_oracle, BoundaryJet,
};
use crate::grid::{dx, dy, Field2D, Grid, GridSpec};
use crate::shear::{evolve_heat_derivative, verify_decay_bounds, ShearEvolution, ShearProfile};
use crate::solver::{Solver, SolverConfig};
use crate::spaces::{check_hardy, check_sobolev_embedding, check_trace, norm_l2_weighted, HardyVariant, NormError};
use crate::transform::{compute_transform, recover_top_derivative, residual_g_equation, MonotonicityWindow};

pub const SUITES: [&str; 4] = ["shear", "compat", "inequalities", "transform"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cmp {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub cmp: Cmp,
    pub pass: bool,
}

impl Verdict {
    fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Verdict {
            name: name.into(),
            value,
            tol,
            cmp: Cmp::AtMost,
            pass: value <= tol,
        }
    }

    fn at_least(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Verdict {
            name: name.into(),
            value,
            tol,
            cmp: Cmp::AtLeast,
            pass: value >= tol,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
}

/// Run one named suite on the configured grid and parameters.
pub fn cmd_verify(suite: &str, cfg: &RunConfig) -> Result<VerifyReport, ExperimentError> {
    let verdicts = match suite {
        "shear" => verify_shear(cfg)?,
        "compat" => verify_compat(cfg)?,
        "inequalities" => verify_inequalities(cfg)?,
        "transform" => verify_transform(cfg)?,
        other => {
            return Err(ExperimentError::Config(format!(
                "unknown suite {other:?}; expected one of {}",
                SUITES.join(", ")
            )))
        }
    };
    let pass = verdicts.iter().all(|v| v.pass);
    Ok(VerifyReport {
        suite: suite.to_string(),
        verdicts,
        pass,
    })
}

fn verify_shear(cfg: &RunConfig) -> Result<Vec<Verdict>, ExperimentError> {
    let profile = ShearProfile::builtin(cfg.shear_k, cfg.params.m + 2)?;
    let grid = Grid::new(cfg.grid)?;
    let ys = grid.y().to_vec();
    let horizon = cfg.t_end;
    let y_limit = 0.5 * cfg.grid.ymax;
    let mut out = Vec::new();
    for i in 0..=4 {
        let t = horizon * i as f64 / 4.0;
        let evo = ShearEvolution::new(&profile, t, &ys, 3, horizon)?;
        let rep = verify_decay_bounds(&evo, &profile, horizon, y_limit);
        let env = (rep.c_tilde1 / rep.measured_min).max(rep.measured_max / rep.c_tilde2);
        out.push(Verdict::at_most(format!("envelope t={t}"), env, 1.0));
        let worst = rep.derivs.iter().map(|d| d.worst_ratio).fold(0.0, f64::max);
        out.push(Verdict::at_most(format!("derivative decay t={t}"), worst, 1.0));
    }
    // the evolved p-th derivative against the grid derivative of the evolved (p-1)-th
    let t = 0.5 * horizon;
    let mut worst: f64 = 0.0;
    for p in 2..=3 {
        let lo = evolve_heat_derivative(&profile, t, p - 1, &ys)?;
        let hi = evolve_heat_derivative(&profile, t, p, &ys)?;
        let mut d = vec![0.0; ys.len()];
        grid.dy_line(&lo, 1, &mut d)?;
        let scale = hi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let err = d.iter().zip(&hi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        worst = worst.max(err);
    }
    out.push(Verdict::at_most("heat derivative consistency", worst, 1e-4));
    Ok(out)
}

fn lines(grid: &Arc<Grid>, fs: &[&dyn Fn(f64) -> f64]) -> Vec<Vec<f64>> {
    fs.iter().map(|f| grid.x().iter().map(|&x| f(x)).collect()).collect()
}

fn verify_compat(cfg: &RunConfig) -> Result<Vec<Verdict>, ExperimentError> {
    const TOL: f64 = 1e-8;
    let grid = Grid::new(cfg.grid)?;
    let profile = ShearProfile::builtin(cfg.shear_k, 8)?;
    let mut out = Vec::new();

    let datum = experiment_datum(&grid, &cfg.params, cfg.delta0.max(1e-3))?;
    let jet = datum.jet.expect("the experiment datum carries its jet");
    let r4 = check_compat_order4(&jet, &profile)?;
    let r6 = check_compat_order6_reg(&jet, &profile, cfg.eps)?;
    let worst = r4.residuals.iter().chain(&r6.residuals).copied().fold(0.0, f64::max);
    out.push(Verdict::at_most("datum closed-form residuals", worst, TOL));

    // odd wall derivatives free, even ones solved for
    let z = |_: f64| 0.0;
    let j1 = |x: f64| 0.3 * x.sin();
    let j3 = |x: f64| 0.15 * x.cos();
    let j5 = |x: f64| 0.06 * (2.0 * x).sin();
    let raw = BoundaryJet::new(grid.clone(), lines(&grid, &[&z, &j1, &z, &j3, &z, &j5, &z, &z, &z]));
    let fixed = make_compatible(&raw, &profile, 0.0, 8)?;
    let r4 = check_compat_order4(&fixed, &profile)?;
    let r6 = check_compat_order6_reg(&fixed, &profile, 0.0)?;
    let worst = r4.residuals.iter().chain(&r6.residuals).copied().fold(0.0, f64::max);
    out.push(Verdict::at_most("manufactured closed-form residuals", worst, TOL));

    let eps = cfg.eps.max(1e-3);
    let c = build_corrector(&fixed, &profile, eps, 6, 8)?;
    let corrected = c.apply_to_jet(&fixed, eps);
    let before = check_compat_order6_reg(&fixed, &profile, eps)?.residual(6).unwrap_or(f64::NAN);
    let after = check_compat_order6_reg(&corrected, &profile, eps)?.residual(6).unwrap_or(f64::NAN);
    out.push(Verdict::at_least("order-6 residual before correction", before, 1e-6));
    out.push(Verdict::at_most("order-6 residual after correction", after, TOL));

    let og = Grid::new(GridSpec::new(16, 128, 20.0))?;
    let good = Field2D::from_fn(og.clone(), |x, y| 1e-2 * x.sin() * y.powi(5) * (-y * y).exp());
    let bad = Field2D::from_fn(og.clone(), |x, y| 1e-2 * x.sin() * y.powi(4) * (-y * y).exp());
    let growth = |u: &Field2D| -> Result<f64, ExperimentError> {
        let coarse = numeric_compat_oracle(u, &profile, 1e-3, 4, 4e-3)?;
        let fine = numeric_compat_oracle(u, &profile, 1e-3, 4, 2.5e-4)?;
        Ok(fine / coarse)
    };
    out.push(Verdict::at_most("oracle growth, compatible datum", growth(&good)?, 4.0));
    out.push(Verdict::at_least("oracle growth, order-4 violation", growth(&bad)?, 10.0));
    Ok(out)
}

/// `sum a cos(n x + phi) y^b e^{-c y}` with seeded coefficients.
#[derive(Debug, Clone)]
struct RandomField {
    terms: Vec<(f64, f64, f64, f64, i32)>,
}

impl RandomField {
    fn family(count: usize, seed: u64) -> Vec<RandomField> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
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
                RandomField { terms }
            })
            .collect()
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(n, ph, a, c, b)| a * (n * x + ph).cos() * y.powi(b) * (-c * y).exp())
            .sum()
    }

    fn sample(&self, grid: &Arc<Grid>, vanish_at_wall: bool) -> Field2D {
        Field2D::from_fn(grid.clone(), |x, y| {
            let f = self.eval(x, y);
            if vanish_at_wall {
                -(-y).exp_m1() * f
            } else {
                f
            }
        })
    }
}

fn verify_inequalities(cfg: &RunConfig) -> Result<Vec<Verdict>, ExperimentError> {
    let fields = RandomField::family(100, cfg.seed);
    let spec = cfg.grid;
    let fine = GridSpec {
        nx: 2 * spec.nx,
        ny: 2 * spec.ny,
        ..spec
    };
    type Check = fn(&Field2D) -> Result<f64, NormError>;
    let checks: [(&str, Check, bool); 3] = [
        ("hardy", |f| check_hardy(f, 0.3, HardyVariant::Decay), false),
        ("trace", |f| check_trace(f, 0.6), false),
        ("sobolev embedding", |f| check_sobolev_embedding(f, 0.1), true),
    ];
    let mut out = Vec::new();
    for (name, check, vanish) in checks {
        let worst = |s: GridSpec| -> Result<f64, ExperimentError> {
            let g = Grid::new(s)?;
            let r = fields
                .par_iter()
                .map(|f| check(&f.sample(&g, vanish)))
                .collect::<Result<Vec<f64>, NormError>>()?;
            Ok(r.into_iter().fold(0.0, f64::max))
        };
        let (c0, c1) = (worst(spec)?, worst(fine)?);
        out.push(Verdict::at_most(format!("{name} constant is finite"), c0, f64::MAX));
        out.push(Verdict::at_most(format!("{name} refinement change"), (c1 / c0 - 1.0).abs(), 0.1));
    }
    Ok(out)
}

fn verify_transform(cfg: &RunConfig) -> Result<Vec<Verdict>, ExperimentError> {
    let cm = measured_cm(cfg)?;
    let params = &cfg.params;
    let mut out = Vec::new();

    let r = run_datum(cfg, cm, cfg.delta0, cfg.eps, cfg.t_end, None)?;
    let last = r.final_state();
    let tf = compute_transform(last, params.m, &r.window)?;
    let top = dx(&last.w, params.m)?;
    let diff = &recover_top_derivative(&tf, last)? - &top;
    let scale = norm_l2_weighted(&top, 0.0);
    let err = if scale > 0.0 { norm_l2_weighted(&diff, 0.0) / scale } else { 0.0 };
    out.push(Verdict::at_most("top derivative recovery", err, 1e-4));
    let c = r.energy.lemma_constant();
    out.push(Verdict::at_most("lemma constant is finite", c, f64::MAX));

    let profile = ShearProfile::builtin(cfg.shear_k, params.m)?;
    let datum_eps = |ny: usize, dt: f64, n: usize| -> Result<f64, ExperimentError> {
        let g = Grid::new(GridSpec { ny, ..cfg.grid })?;
        let sc = SolverConfig {
            cm: Some(cm),
            ..cfg.solver.clone()
        };
        let mut s = Solver::new(g.clone(), profile.clone(), cfg.eps, sc, cfg.t_end)?;
        let d = experiment_datum(&g, params, cfg.delta0)?;
        let mut st = s.state(0.0, dy(&d.u0, 1)?)?;
        let win = MonotonicityWindow::new(&st.shear, cm, None);
        for _ in 0..(0.1 / dt).round() as usize {
            st = s.step_imex(&st, dt)?;
        }
        let next = s.step_imex(&st, dt)?;
        Ok(residual_g_equation(&st, &next, n, params, &win)?)
    };
    let ny = cfg.grid.ny;
    for n in 1..=params.m {
        let coarse = datum_eps(ny / 2, 0.02, n)?;
        let finer = datum_eps(ny, 0.01, n)?;
        out.push(Verdict::at_least(format!("g_{n} residual refinement ratio"), coarse / finer, 1.8));
    }
    Ok(out)
}
