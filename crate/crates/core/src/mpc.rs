//! Receding-horizon tracking on an estimated plant model.
//!
//! At each sampling instant `t_i` the unconstrained tracking problem is solved
//! on `[t_i, t_i + T]` for `ẋ = Â x + BΛ̂ u`, and the resulting affine law,
//! projected onto the input ball, drives the true plant until `t_{i+1}`.
//! Running the same loop with the true parameters gives the oracle.

use crate::error::{check_dims, check_len, Error, Result};
use crate::lqt::{quadrature_cost, solve_unconstrained_lqt, FeedbackLaw, LqtWeights};
use crate::numeric::{rk4_step, Mat, TimeGrid, Vector};
use crate::plant::{ExoSignal, PlantSpec};
use crate::simlog::{LogRow, Phase, SimLog};

/// Plant model used by the controller; `B` is known, `Â` and `Λ̂` are learned.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEstimate {
    pub a_hat: Mat,
    pub lambda_hat: Vector,
    pub b: Mat,
}

impl ModelEstimate {
    pub fn new(a_hat: Mat, lambda_hat: Vector, b: Mat) -> Result<Self> {
        let n = a_hat.nrows();
        check_dims("estimated A", (n, n), a_hat.shape())?;
        check_dims("input matrix B", (n, lambda_hat.len()), b.shape())?;
        if let Some((index, &value)) = lambda_hat.iter().enumerate().find(|(_, l)| !(**l > 0.0)) {
            return Err(Error::NonPositiveLambdaEstimate { index, value });
        }
        Ok(Self { a_hat, lambda_hat, b })
    }

    /// The true parameters, as used by the oracle controller.
    pub fn exact(plant: &PlantSpec) -> Result<Self> {
        Self::new(plant.a.clone(), plant.lambda.clone(), plant.b.clone())
    }

    pub fn b_lambda(&self) -> Mat {
        &self.b * Mat::from_diagonal(&self.lambda_hat)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: f64,
    pub sample_interval: f64,
    pub weights: LqtWeights,
    pub u_max: f64,
    /// Integration step; also the step of every horizon grid.
    pub step: f64,
    /// Windows are clipped so they never extend past this time.
    pub terminal_time: Option<f64>,
}

impl MpcConfig {
    pub fn new(horizon: f64, sample_interval: f64, weights: LqtWeights, u_max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
        }
        if !(sample_interval > 0.0 && sample_interval <= horizon) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need 0 < sample interval ≤ horizon, got {sample_interval} and {horizon}"
            )));
        }
        let ratio = sample_interval / step;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "sample interval {sample_interval} is not a multiple of the step {step}"
            )));
        }
        if !(u_max > 0.0) {
            return Err(Error::InvalidArgument(format!("u_max must be positive, got {u_max}")));
        }
        if !weights.has_scalar_r() {
            return Err(Error::UnsupportedWeight);
        }
        Ok(Self {
            horizon,
            sample_interval,
            weights,
            u_max,
            step,
            terminal_time: None,
        })
    }

    pub fn with_terminal_time(mut self, t: f64) -> Self {
        self.terminal_time = Some(t);
        self
    }

    fn steps_per_sample(&self) -> usize {
        (self.sample_interval / self.step).round() as usize
    }

    fn window(&self, t_i: f64) -> Result<TimeGrid> {
        let mut t_end = t_i + self.horizon;
        if let Some(cap) = self.terminal_time {
            t_end = t_end.min(cap).max(t_i);
        }
        let nodes = ((t_end - t_i) / self.step).round() as usize + 1;
        TimeGrid::with_nodes(t_i, self.step, nodes)
    }
}

/// Solves the window starting at `t_i` and returns the projected law.
pub fn mpc_step(
    model: &ModelEstimate,
    cfg: &MpcConfig,
    x_now: &Vector,
    t_i: f64,
    x_d: &ExoSignal,
) -> Result<FeedbackLaw> {
    check_len("MPC state", model.a_hat.nrows(), x_now.len())?;
    if x_now.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalBlowup { t: t_i });
    }
    let grid = cfg.window(t_i)?;
    let (_, law) = solve_unconstrained_lqt(&model.a_hat, &model.b_lambda(), &cfg.weights, x_d, &grid)?;
    Ok(law.with_projection(cfg.u_max))
}

/// Closed loop of the true plant under receding-horizon control on `model`
/// over `t_span`, starting from `x0`.
///
/// In the returned log `x_m` repeats `x_d` (the reference model is inactive),
/// `theta_err` carries the supplied constant and `lyapunov` is NaN. A
/// zero-length span yields an empty log.
pub fn run_receding_horizon(
    model: &ModelEstimate,
    cfg: &MpcConfig,
    plant: &PlantSpec,
    t_span: (f64, f64),
    x0: &Vector,
    x_d: &ExoSignal,
    theta_err: f64,
) -> Result<SimLog> {
    let n_x = plant.n_x();
    check_len("MPC initial state", n_x, x0.len())?;
    check_dims("estimated A", plant.a.shape(), model.a_hat.shape())?;
    check_dims("input matrix B", plant.b.shape(), model.b.shape())?;
    check_len("tracked signal", n_x, x_d.dim())?;

    let mut log = SimLog::new(n_x, plant.n_u());
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Ok(log);
    }
    let grid = TimeGrid::new(t0, t1, cfg.step)?;
    let per_sample = cfg.steps_per_sample();
    let b_lambda = plant.b_lambda();

    let mut x = x0.clone();
    let mut law: Option<FeedbackLaw> = None;
    for k in 0..grid.len() {
        let t = grid.time(k);
        if k > 0 {
            let active = law.as_ref().expect("law set at first node");
            x = rk4_step(
                |t, x| &plant.a * x + &b_lambda * active.input(x, t),
                grid.time(k - 1),
                &x,
                grid.step(),
            )?;
        }
        if k % per_sample == 0 && (k + 1 < grid.len() || law.is_none()) {
            law = Some(mpc_step(model, cfg, &x, t, x_d)?);
        }
        let active = law.as_ref().expect("law set at first node");
        let u = active.unconstrained_input(&x, t);
        let u_sat = active.input(&x, t);
        let xd = x_d.value(t);
        log.push(LogRow {
            t,
            x_p: x.clone(),
            x_m: xd.clone(),
            x_d: xd,
            du: &u_sat - &u,
            u,
            u_sat,
            theta_err,
            lyapunov: f64::NAN,
            phase: Phase::Mpc,
        })?;
    }
    Ok(log)
}

/// `J(mpc_log) − J(oracle_log)` by trapezoidal quadrature.
pub fn optimality_gap(
    mpc_log: &SimLog,
    oracle_log: &SimLog,
    w: &LqtWeights,
    x_d: &ExoSignal,
) -> Result<f64> {
    let (a, b) = (mpc_log.rows(), oracle_log.rows());
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!("{} rows vs {} rows", a.len(), b.len())));
    }
    if let Some((ra, rb)) = a.iter().zip(b).find(|(ra, rb)| (ra.t - rb.t).abs() > 1e-9) {
        return Err(Error::GridMismatch(format!("times differ: {} vs {}", ra.t, rb.t)));
    }
    if let (Some(ra), Some(rb)) = (a.first(), b.first()) {
        if ra.x_p != rb.x_p {
            return Err(Error::GridMismatch("logs start from different states".into()));
        }
    }
    Ok(quadrature_cost(a, w, x_d) - quadrature_cost(b, w, x_d))
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len()) as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (num, den) = xs.iter().zip(ys).fold((0.0, 0.0), |(num, den), (x, y)| {
        (num + (x - mx) * (y - my), den + (x - mx) * (x - mx))
    });
    num / den
}
