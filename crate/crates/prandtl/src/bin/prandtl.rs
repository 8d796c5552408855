use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;

use prandtl::experiments::{self as ex, ExperimentError, Manifest, RunConfig};
use prandtl::solver::{Checkpoint, SolverError};

const OK: u8 = 0;
const FAIL: u8 = 1;
const USAGE: u8 = 2;
const BLOWUP: u8 = 3;

#[derive(Parser)]
#[command(name = "prandtl", version, about = "Regularized Prandtl boundary-layer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Enforce the full parameter constraints (m >= 6, k + ell > 3/2).
    #[arg(long)]
    strict_paper_mode: bool,
}

#[derive(Subcommand)]
enum Command {
    /// One run of the reference pipeline: manifest, energy CSV, final checkpoint.
    Run(Common),
    /// Lifespan T* over `delta0_list` and its fit against log(1/delta0).
    Lifespan(Common),
    /// Stability ratio for two initial gaps.
    Stability(Common),
    /// Regularization sweep over `eps_list`.
    SweepEps(Common),
    /// Property suites; all of them when no name is given.
    Verify {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(ex::SUITES))]
        suite: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { OK });
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(USAGE);
    }
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("PRANDTL_THREADS") {
        let n: usize = v.parse().with_context(|| format!("PRANDTL_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<ExperimentError>() {
        Some(ExperimentError::Solver(s)) => match s {
            SolverError::Blowup(_)
            | SolverError::LinearSolve { .. }
            | SolverError::Cfl { .. }
            | SolverError::NonContraction { .. }
            | SolverError::Consistency { .. } => BLOWUP,
            _ => USAGE,
        },
        _ => USAGE,
    }
}

fn load(common: &Common) -> anyhow::Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&common.config)?;
    if common.strict_paper_mode {
        cfg.strict = true;
        cfg.validate()?;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    Ok((cfg, out))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn dispatch(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Run(c) => {
            let (cfg, out) = load(&c)?;
            let (r, man) = ex::cmd_run(&cfg)?;
            write_json(&out.join("manifest.json"), &man)?;
            let csv = out.join("energy.csv");
            let file = fs::File::create(&csv).with_context(|| format!("cannot write {}", csv.display()))?;
            r.energy.write_csv(file)?;
            Checkpoint::from_state(r.final_state()).save(&out.join("checkpoint.txt"))?;
            println!("{} at t = {} after {} steps", r.stop, r.stop.time(r.t_end), r.steps);
            Ok(OK)
        }
        Command::Lifespan(c) => {
            let (cfg, out) = load(&c)?;
            let rep = ex::cmd_lifespan(&cfg)?;
            write_json(&out.join("lifespan.json"), &rep)?;
            write_json(&out.join("manifest.json"), &Manifest::new("lifespan", &cfg, rep.cm))?;
            for row in &rep.rows {
                println!("delta0 = {:e}  T* = {}  ({})", row.delta0, row.t_star, row.reason);
            }
            println!("fit T* = {} + {} log(1/delta0), R^2 = {}", rep.intercept, rep.slope, rep.r_squared);
            Ok(if rep.r_squared >= 0.9 { OK } else { FAIL })
        }
        Command::Stability(c) => {
            let (cfg, out) = load(&c)?;
            let rep = ex::cmd_stability(&cfg)?;
            write_json(&out.join("stability.json"), &rep)?;
            write_json(&out.join("manifest.json"), &Manifest::new("stability", &cfg, ex::measured_cm(&cfg)?))?;
            for row in &rep.rows {
                println!("gap = {:e}  R = {}", row.gap, row.ratio);
            }
            println!("relative change {}", rep.relative_change);
            Ok(if rep.relative_change <= 0.25 { OK } else { FAIL })
        }
        Command::SweepEps(c) => {
            let (cfg, out) = load(&c)?;
            let rep = ex::cmd_sweep_eps(&cfg)?;
            write_json(&out.join("sweep_eps.json"), &rep)?;
            write_json(&out.join("manifest.json"), &Manifest::new("sweep-eps", &cfg, ex::measured_cm(&cfg)?))?;
            for row in &rep.rows {
                println!("eps = {:e}  C1 = {}  C2 = {}  ({})", row.eps, row.fit.c1, row.fit.c2, row.stop);
            }
            println!("distances {:?}  cauchy {}", rep.distances, rep.cauchy);
            Ok(if rep.cauchy { OK } else { FAIL })
        }
        Command::Verify { suite, common } => {
            let (cfg, out) = load(&common)?;
            let names: Vec<&str> = match &suite {
                Some(s) => vec![s.as_str()],
                None => ex::SUITES.to_vec(),
            };
            let mut reports = Vec::new();
            for name in names {
                let rep = ex::cmd_verify(name, &cfg)?;
                for v in &rep.verdicts {
                    let op = match v.cmp {
                        ex::Cmp::AtMost => "<=",
                        ex::Cmp::AtLeast => ">=",
                    };
                    let tag = if v.pass { "PASS" } else { "FAIL" };
                    println!("{tag} {name}: {} = {:e} {op} {:e}", v.name, v.value, v.tol);
                }
                reports.push(rep);
            }
            write_json(&out.join("verify.json"), &reports)?;
            Ok(if reports.iter().all(|r| r.pass) { OK } else { FAIL })
        }
    }
}
