//! Adapt-then-switch experiment: adaptive control on `[0, T_adap]`, parameter
//! extraction, then receding-horizon tracking on the learned model next to
//! the oracle that knows the true plant.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, InitialEstimate};
use super::plot;
use crate::error::{Error, Result};
use crate::lqt::{quadrature_cost, solve_unconstrained_lqt, CostToGo};
use crate::mpc::{fit_slope, optimality_gap, run_receding_horizon, ModelEstimate, MpcConfig};
use crate::msac::{extract_parameters, ideal_gains, simulate_msac, IdealGains, TunerState};
use crate::numeric::{Mat, TimeGrid, Vector};
use crate::pe::{pe_check, PeReport};
use crate::simlog::SimLog;

/// Environment variable capping the worker threads of a sweep.
pub const THREADS_ENV: &str = "ADAPTRACK_THREADS";

/// Everything produced by one in-memory run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub oracle_gains: IdealGains,
    pub msac: SimLog,
    pub regressor: Vec<Vector>,
    /// `None` when the adaptive phase is too short for a single window.
    pub pe: Option<PeReport>,
    pub estimate: ModelEstimate,
    pub mpc: SimLog,
    pub oracle: SimLog,
    pub theta_err_initial: f64,
    pub theta_err_switch: f64,
    pub v_mpc: f64,
    pub v_star: f64,
    pub gap: f64,
}

impl Experiment {
    pub fn t_switch(&self) -> f64 {
        self.msac.last().map_or(0.0, |r| r.t)
    }

    pub fn pe_verdict(&self) -> bool {
        self.pe.as_ref().is_some_and(PeReport::is_persistently_exciting)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub t_switch: f64,
    pub theta_err_initial: f64,
    pub theta_err_switch: f64,
    pub pe_verdict: bool,
    pub pe_level: Option<f64>,
    /// False when the regressor was not shown to be persistently exciting, in
    /// which case the learned parameters carry no convergence guarantee.
    pub learning_guaranteed: bool,
    pub a_hat: Vec<Vec<f64>>,
    pub lambda_hat: Vec<f64>,
    pub v_mpc: f64,
    pub v_star: f64,
    pub gap: f64,
    pub wall_clock_s: f64,
    pub artifacts: Vec<PathBuf>,
}

fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn initial_estimate(cfg: &ExperimentConfig, gains: &IdealGains) -> Mat {
    match &cfg.tuner.init {
        InitialEstimate::Scale(s) => gains.theta_a() * *s,
        InitialEstimate::Explicit(m) => m.clone(),
    }
}

fn tuner(cfg: &ExperimentConfig, theta0: Mat) -> Result<TunerState> {
    TunerState::new(
        cfg.plant.b.clone(),
        &cfg.reference,
        cfg.tuner.gamma,
        cfg.tuner.beta,
        &cfg.tuner.q_lyap,
        theta0,
    )
}

/// Receding-horizon settings for a tracking phase ending at `t_end`.
pub fn mpc_config(cfg: &ExperimentConfig, t_end: f64) -> Result<MpcConfig> {
    let s = &cfg.schedule;
    let mpc = MpcConfig::new(s.horizon, s.sample_interval, cfg.weights.clone(), cfg.plant.u_max, s.step)?;
    Ok(mpc.with_terminal_time(t_end))
}

/// Runs the adaptive phase only.
pub fn adapt(cfg: &ExperimentConfig) -> Result<(crate::msac::MsacRun, IdealGains)> {
    let gains = ideal_gains(&cfg.plant, &cfg.reference)?;
    let state = tuner(cfg, initial_estimate(cfg, &gains))?;
    let grid = TimeGrid::new(0.0, cfg.schedule.t_adapt, cfg.schedule.step)?;
    let run = simulate_msac(&cfg.plant, &cfg.reference, &cfg.exo, state, &cfg.plant.x0, &grid, Some(&gains))?;
    Ok((run, gains))
}

/// PE verdict on the adaptive phase's regressor; `None` if it is too short.
pub fn pe_of(cfg: &ExperimentConfig, regressor: &[Vector]) -> Result<Option<PeReport>> {
    match pe_check(regressor, 0.0, cfg.schedule.step, cfg.tuner.pe_window, cfg.tuner.pe_alpha) {
        Ok(r) => Ok(Some(r)),
        Err(Error::InsufficientData(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs both phases in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    let (run, gains) = adapt(cfg)?;
    let pe = pe_of(cfg, &run.regressor)?;
    let estimate = extract_parameters(&run.tuner, &cfg.reference, &cfg.plant.b)?;

    let switch = run.log.last().expect("adaptive log has at least one row");
    let t_switch = switch.t;
    let theta_err_initial = run.log.first().map_or(f64::NAN, |r| r.theta_err);
    let theta_err_switch = switch.theta_err;

    let span = (t_switch, t_switch + cfg.schedule.t_mpc);
    let mpc_cfg = mpc_config(cfg, span.1)?;
    let exact = ModelEstimate::exact(&cfg.plant)?;
    let mpc = run_receding_horizon(&estimate, &mpc_cfg, &cfg.plant, span, &run.x_p, &cfg.exo, theta_err_switch)?;
    let oracle = run_receding_horizon(&exact, &mpc_cfg, &cfg.plant, span, &run.x_p, &cfg.exo, 0.0)?;
    let v_mpc = quadrature_cost(mpc.rows(), &cfg.weights, &cfg.exo);
    let v_star = quadrature_cost(oracle.rows(), &cfg.weights, &cfg.exo);
    let gap = optimality_gap(&mpc, &oracle, &cfg.weights, &cfg.exo)?;

    Ok(Experiment {
        oracle_gains: gains,
        msac: run.log,
        regressor: run.regressor,
        pe,
        estimate,
        mpc,
        oracle,
        theta_err_initial,
        theta_err_switch,
        v_mpc,
        v_star,
        gap,
    })
}

fn save_log(log: &SimLog, path: PathBuf, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    log.save(&path)?;
    artifacts.push(path);
    Ok(())
}

/// Runs the experiment and writes its artifacts to `cfg.output.dir`:
/// `msac.csv`, `mpc.csv`, `oracle.csv`, `pe.csv`, `gap.csv`, `report.json`
/// and, when enabled, SVG plots.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunReport> {
    let started = Instant::now();
    let exp = run_experiment(cfg)?;
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;

    let mut artifacts = Vec::new();
    save_log(&exp.msac, dir.join("msac.csv"), &mut artifacts)?;
    save_log(&exp.mpc, dir.join("mpc.csv"), &mut artifacts)?;
    save_log(&exp.oracle, dir.join("oracle.csv"), &mut artifacts)?;
    if let Some(pe) = &exp.pe {
        let path = dir.join("pe.csv");
        pe.write_csv(BufWriter::new(File::create(&path)?))?;
        artifacts.push(path);
    }
    let gap_path = dir.join("gap.csv");
    write_gap_csv(&gap_path, &[(exp.theta_err_switch, exp.v_mpc, exp.v_star, exp.gap)])?;
    artifacts.push(gap_path);

    if cfg.output.plots {
        if exp.msac.len() >= 2 {
            artifacts.extend(plot::plot_adaptive_phase(&exp.msac, Some(cfg.plant.u_max), dir)?);
        }
        if exp.mpc.len() >= 2 {
            artifacts.extend(plot::plot_comparison(&exp.mpc, &exp.oracle, dir)?);
        }
    }

    let pe_verdict = exp.pe_verdict();
    let report_path = dir.join("report.json");
    artifacts.push(report_path.clone());
    let report = RunReport {
        t_switch: exp.t_switch(),
        theta_err_initial: exp.theta_err_initial,
        theta_err_switch: exp.theta_err_switch,
        pe_verdict,
        pe_level: exp.pe.as_ref().map(PeReport::level),
        learning_guaranteed: pe_verdict,
        a_hat: rows_of(&exp.estimate.a_hat),
        lambda_hat: exp.estimate.lambda_hat.iter().copied().collect(),
        v_mpc: exp.v_mpc,
        v_star: exp.v_star,
        gap: exp.gap,
        wall_clock_s: started.elapsed().as_secs_f64(),
        artifacts,
    };
    let out = BufWriter::new(File::create(&report_path)?);
    serde_json::to_writer_pretty(out, &report).map_err(std::io::Error::from)?;
    Ok(report)
}

/// Rows of `(delta, V_mpc, V_star, gap)`.
fn write_gap_csv(path: &Path, rows: &[(f64, f64, f64, f64)]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(["delta", "V_mpc", "V_star", "gap"])?;
    for &(d, a, b, g) in rows {
        w.write_record([d, a, b, g].map(crate::simlog::fmt_f64))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub v_mpc: f64,
    pub v_star: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of `ln|gap|` against `ln δ` over points with
    /// `δ > 0` and a non-zero gap; NaN with fewer than two such points.
    pub slope: f64,
}

/// Model obtained from the estimate `Θ̂ = (1 − δ/‖Θ‖_F)·Θ`, i.e. at Frobenius
/// distance `δ` from the truth.
pub fn perturbed_estimate(cfg: &ExperimentConfig, gains: &IdealGains, delta: f64) -> Result<ModelEstimate> {
    let theta = gains.theta_a();
    let scale = 1.0 - delta / theta.norm();
    let state = tuner(cfg, theta * scale)?;
    extract_parameters(&state, &cfg.reference, &cfg.plant.b)
}

fn worker_threads() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Receding-horizon runs on injected estimates, each compared against the
/// oracle over `[T_adap, T_adap + T_MPC]` from the configured initial state.
/// Points run in parallel, capped by [`THREADS_ENV`].
pub fn sweep_delta(cfg: &ExperimentConfig, deltas: &[f64]) -> Result<Sweep> {
    if let Some(d) = deltas.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta must be a finite non-negative number, got {d}")));
    }
    let gains = ideal_gains(&cfg.plant, &cfg.reference)?;
    let t0 = cfg.schedule.t_adapt;
    let span = (t0, t0 + cfg.schedule.t_mpc);
    let mpc_cfg = mpc_config(cfg, span.1)?;
    let x0 = &cfg.plant.x0;
    let exact = ModelEstimate::exact(&cfg.plant)?;
    let oracle = run_receding_horizon(&exact, &mpc_cfg, &cfg.plant, span, x0, &cfg.exo, 0.0)?;
    let v_star = quadrature_cost(oracle.rows(), &cfg.weights, &cfg.exo);

    let point = |&delta: &f64| -> Result<SweepPoint> {
        let estimate = perturbed_estimate(cfg, &gains, delta)?;
        let log = run_receding_horizon(&estimate, &mpc_cfg, &cfg.plant, span, x0, &cfg.exo, delta)?;
        let gap = optimality_gap(&log, &oracle, &cfg.weights, &cfg.exo)?;
        Ok(SweepPoint {
            delta,
            v_mpc: quadrature_cost(log.rows(), &cfg.weights, &cfg.exo),
            v_star,
            gap,
        })
    };
    let points = match worker_threads() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {n} worker threads: {e}")))?
            .install(|| deltas.par_iter().map(point).collect::<Result<Vec<_>>>())?,
        None => deltas.par_iter().map(point).collect::<Result<Vec<_>>>()?,
    };

    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.delta > 0.0 && p.gap != 0.0)
        .map(|p| (p.delta.ln(), p.gap.abs().ln()))
        .unzip();
    let slope = if xs.len() >= 2 { fit_slope(&xs, &ys) } else { f64::NAN };
    Ok(Sweep { points, slope })
}

pub fn write_sweep_csv(sweep: &Sweep, path: &Path) -> Result<()> {
    let rows: Vec<_> = sweep
        .points
        .iter()
        .map(|p| (p.delta, p.v_mpc, p.v_star, p.gap))
        .collect();
    write_gap_csv(path, &rows)
}

/// Cost-to-go of the true plant over the MPC phase `[T_adap, T_adap + T_MPC]`.
pub fn riccati_table(cfg: &ExperimentConfig) -> Result<CostToGo> {
    let t0 = cfg.schedule.t_adapt;
    let grid = TimeGrid::new(t0, t0 + cfg.schedule.t_mpc, cfg.schedule.step)?;
    let (ctg, _) = solve_unconstrained_lqt(&cfg.plant.a, &cfg.plant.b_lambda(), &cfg.weights, &cfg.exo, &grid)?;
    Ok(ctg)
}
