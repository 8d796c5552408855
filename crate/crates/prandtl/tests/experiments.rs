use std::path::Path;
use std::process::Command;

use prandtl::compat::BoundaryJet;
use prandtl::experiments::*;
use prandtl::grid::{dy, Grid, GridSpec};
use prandtl::spaces::{norm_hm_weighted, SobolevParams};

fn small(delta0: f64, t_end: f64) -> RunConfig {
    let mut c = RunConfig::reference();
    c.grid = GridSpec::new(16, 64, 20.0);
    c.delta0 = delta0;
    c.t_end = t_end;
    c.solver.cm = Some(0.03);
    c
}

fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(cfg).unwrap()).unwrap();
    p
}

#[test]
fn config_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::reference();
    let p = write_config(dir.path(), "ref.json", &cfg);
    assert_eq!(RunConfig::load(&p).unwrap(), cfg);

    let missing = dir.path().join("absent.json");
    let e = RunConfig::load(&missing).unwrap_err();
    assert!(e.to_string().contains("absent.json"), "{e}");

    let mut v = serde_json::to_value(&cfg).unwrap();
    v["colour"] = serde_json::json!(1);
    let p = dir.path().join("extra.json");
    std::fs::write(&p, v.to_string()).unwrap();
    assert!(matches!(RunConfig::load(&p), Err(ExperimentError::Parse { .. })));

    for bad in [
        RunConfig { eps: -1.0, ..cfg.clone() },
        RunConfig { delta0: -1e-3, ..cfg.clone() },
        RunConfig { t_end: 0.0, ..cfg.clone() },
        RunConfig { shear_k: 4.0, ..cfg.clone() },
        RunConfig { strict: true, ..cfg.clone() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn config_hash_is_deterministic_and_sensitive() {
    let a = RunConfig::reference();
    assert_eq!(a.hash(), RunConfig::reference().hash());
    assert_eq!(a.hash().len(), 64);
    let b = RunConfig { eps: 2e-3, ..a.clone() };
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn experiment_datum_has_requested_size_and_exact_jet() {
    let g = Grid::new(GridSpec::new(16, 256, 20.0)).unwrap();
    let params = SobolevParams::default();
    let d = experiment_datum(&g, &params, 2e-3).unwrap();
    let w = dy(&d.u0, 1).unwrap();
    let n = norm_hm_weighted(&w, params.m, params.lambda()).unwrap().norm();
    assert!((n / 2e-3 - 1.0).abs() < 1e-3, "norm {n}");
    let exact = d.jet.unwrap();
    let sampled = BoundaryJet::from_field(&d.u0, 6).unwrap();
    let scale = 2e-3 / datum_unit_norm(&g, &params).unwrap();
    for j in 0..=6 {
        let err = exact
            .order(j)
            .iter()
            .zip(sampled.order(j))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // the wall stencils lose accuracy with the derivative order
        assert!(err <= 1e-3 * scale * 720.0, "order {j}: {err:e}");
    }
    assert_eq!(experiment_datum(&g, &params, 0.0).unwrap().u0.max_abs(), 0.0);
}

#[test]
fn linear_fit_examples() {
    let x = [0.0, 1.0, 2.0, 3.0];
    let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
    let (b, a, r2) = linear_fit(&x, &y);
    assert!((b + 0.5).abs() < 1e-14 && (a - 2.0).abs() < 1e-14 && (r2 - 1.0).abs() < 1e-14);
    let (_, _, r2) = linear_fit(&x, &[1.0, 3.0, 2.0, 4.0]);
    assert!((r2 - 0.64).abs() < 1e-12);
    assert!(linear_fit(&[1.0], &[1.0]).2.is_nan());
}

#[test]
fn zero_run_has_zero_energy_and_reaches_t() {
    let cfg = small(0.0, 0.2);
    let (r, man) = cmd_run(&cfg).unwrap();
    assert_eq!(man.stop_reason.as_deref(), Some("reached T"));
    assert_eq!(man.config_hash, cfg.hash());
    for s in &r.energy.samples {
        assert_eq!([s.e_aniso, s.e_g, s.e_top, s.d_aniso, s.d_g], [0.0; 5]);
    }
}

#[test]
fn energy_csv_is_deterministic() {
    let cfg = small(1e-3, 0.2);
    let csv = |c: &RunConfig| {
        let (r, _) = cmd_run(c).unwrap();
        let mut buf = Vec::new();
        r.energy.write_csv(&mut buf).unwrap();
        buf
    };
    let a = csv(&cfg);
    assert!(!a.is_empty());
    assert_eq!(a, csv(&cfg));
}

#[test]
fn reference_run_reaches_t() {
    let (r, man) = cmd_run(&RunConfig::reference()).unwrap();
    assert_eq!(r.stop.label(), "reached T");
    assert!(man.cm > 0.0 && man.zeta > 0.0 && man.steps > 0);
}

#[test]
fn sweep_needs_three_decreasing_values() {
    let mut cfg = small(0.0, 0.1);
    cfg.eps_list = vec![1e-3];
    assert!(matches!(cmd_sweep_eps(&cfg), Err(ExperimentError::Config(_))));
    cfg.eps_list = vec![1e-4, 1e-3, 1e-2];
    assert!(matches!(cmd_sweep_eps(&cfg), Err(ExperimentError::Config(_))));
}

#[test]
fn sweep_on_zero_data_has_zero_distances() {
    let cfg = small(0.0, 0.1);
    let r = cmd_sweep_eps(&cfg).unwrap();
    assert_eq!(r.distances, vec![0.0, 0.0]);
    assert!(r.cauchy);
    assert!(r.rows.iter().all(|row| row.fit.degenerate));
}

#[test]
fn identical_data_give_identical_trajectories() {
    let cfg = small(1e-3, 0.2);
    let a = run_datum(&cfg, 0.03, cfg.delta0, cfg.eps, cfg.t_end, None).unwrap();
    let b = run_datum(&cfg, 0.03, cfg.delta0, cfg.eps, cfg.t_end, None).unwrap();
    for (sa, sb) in a.states.iter().zip(&b.states) {
        assert_eq!((&sa.u - &sb.u).max_abs(), 0.0);
    }
}

#[test]
fn stability_ratio_on_a_short_run() {
    let cfg = small(1e-3, 0.2);
    let r = cmd_stability(&cfg).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(r.rows.iter().all(|row| row.ratio.is_finite() && row.ratio >= 1.0));
    assert!(r.relative_change <= 0.25, "{r:?}");
}

#[test]
fn lifespan_extremes() {
    let mut cfg = small(0.0, 1.0);
    cfg.lifespan_cap = 1.0;
    cfg.solver.dt = 5e-3;
    let zero = lifespan(&cfg, 0.03, 0.0).unwrap();
    assert!(zero.unbounded);
    assert_eq!(zero.t_star, 1.0);
    assert_eq!(zero.reason, "unbounded at resolution");
    let big = lifespan(&cfg, 0.03, 5.0).unwrap();
    assert!(!big.unbounded);
    assert!(big.t_star <= 1e-2, "{big:?}");
    cfg.delta0_list = vec![1e-3, 1e-2];
    assert!(matches!(cmd_lifespan(&cfg), Err(ExperimentError::Config(_))));
}

#[test]
fn verify_rejects_unknown_suite_and_passes_compat() {
    let cfg = RunConfig::reference();
    assert!(matches!(cmd_verify("foo", &cfg), Err(ExperimentError::Config(_))));
    let r = cmd_verify("compat", &cfg).unwrap();
    assert!(r.pass, "{r:?}");
    let json = serde_json::to_value(&r).unwrap();
    assert!(json["verdicts"].as_array().unwrap().iter().all(|v| v["pass"].is_boolean()));
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_prandtl")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "zero.json", &small(0.0, 0.1));
    let o = cli(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "energy.csv", "checkpoint.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let man: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(man["stop_reason"], "reached T");

    let missing = dir.path().join("nowhere.json");
    let o = cli(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.json"));

    let o = cli(&["verify", "foo", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = cli(&["run", "--config", cfg.to_str().unwrap(), "--strict-paper-mode"]);
    assert_eq!(o.status.code(), Some(2));
    let o = cli(&["jump"]);
    assert_eq!(o.status.code(), Some(2));
}
