//! Magnitude-saturated model-reference adaptive control with a high-order
//! tuner.
//!
//! The parameter matrix `Θ̂_a` is `n_u × (n_x + 2 n_u)` and stacks
//! `[K̂_x, K̂_r, diag(λ̂)]`. The last block is kept diagonal: its update is
//! masked to the diagonal, which leaves the Lyapunov cancellation intact
//! because the true Λ is diagonal as well.

use nalgebra::SVD;

use crate::error::{check_dims, check_len, Error, Result};
use crate::mpc::ModelEstimate;
use crate::numeric::{rk4_step, solve_lyapunov, Mat, TimeGrid, Vector};
use crate::plant::{saturate, ExoSignal, PlantSpec, ReferenceModel};
use crate::simlog::{LogRow, Phase, SimLog};

/// Gains satisfying the matching conditions `A_p + B_pΛK_x = A_m`,
/// `B_pΛK_r = B_m`. Only simulation-side code may hold one of these.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealGains {
    pub k_x: Mat,
    pub k_r: Mat,
    pub lambda: Vector,
}

impl IdealGains {
    /// `Θ_a = [K_x, K_r, Λ]`
    pub fn theta_a(&self) -> Mat {
        let n_u = self.k_x.nrows();
        let (n_x, n_r) = (self.k_x.ncols(), self.k_r.ncols());
        let mut theta = Mat::zeros(n_u, n_x + n_r + n_u);
        theta.columns_mut(0, n_x).copy_from(&self.k_x);
        theta.columns_mut(n_x, n_r).copy_from(&self.k_r);
        theta
            .columns_mut(n_x + n_r, n_u)
            .copy_from(&Mat::from_diagonal(&self.lambda));
        theta
    }
}

/// Least-squares solve of the matching conditions, rejected when the
/// residual exceeds `1e-8`.
pub fn ideal_gains(plant: &PlantSpec, model: &ReferenceModel) -> Result<IdealGains> {
    check_dims("reference A", (plant.n_x(), plant.n_x()), model.a.shape())?;
    check_dims("reference B", (plant.n_x(), plant.n_u()), model.b.shape())?;
    let bl = plant.b_lambda();
    let svd = SVD::new(bl.clone(), true, true);
    let solve = |rhs: &Mat| {
        svd.solve(rhs, 1e-12)
            .map_err(|e| Error::SolveFailed(e.to_string()))
    };
    let k_x = solve(&(&model.a - &plant.a))?;
    let k_r = solve(&model.b)?;
    let residual = (&plant.a + &bl * &k_x - &model.a)
        .norm()
        .max((&bl * &k_r - &model.b).norm());
    if residual > 1e-8 {
        return Err(Error::NoMatchingSolution { residual });
    }
    Ok(IdealGains {
        k_x,
        k_r,
        lambda: plant.lambda.clone(),
    })
}

/// Adaptive parameter estimates together with the tuner's constant data.
#[derive(Debug, Clone, PartialEq)]
pub struct TunerState {
    pub theta_hat: Mat,
    pub xi: Mat,
    /// Auxiliary error absorbing the saturation deficit.
    pub e_delta: Vector,
    gamma: f64,
    beta: f64,
    mu: f64,
    p: Mat,
    b_p: Mat,
}

impl TunerState {
    /// Builds a tuner with `μ` at its lower bound `2γ/β ‖P B_p‖_F²`, `P` the
    /// solution of `A_mᵀP + PA_m = −Q`. `Ξ_a` starts equal to `Θ̂_a`.
    pub fn new(
        b_p: Mat,
        model: &ReferenceModel,
        gamma: f64,
        beta: f64,
        q_lyap: &Mat,
        theta_hat0: Mat,
    ) -> Result<Self> {
        let p = solve_lyapunov(&model.a, q_lyap)?;
        let mu = mu_lower_bound(gamma, beta, &p, &b_p);
        Self::with_mu(b_p, p, gamma, beta, mu, theta_hat0)
    }

    pub fn with_mu(
        b_p: Mat,
        p: Mat,
        gamma: f64,
        beta: f64,
        mu: f64,
        theta_hat0: Mat,
    ) -> Result<Self> {
        let (n_x, n_u) = b_p.shape();
        check_dims("tuner P", (n_x, n_x), p.shape())?;
        check_dims("initial estimate", (n_u, n_x + 2 * n_u), theta_hat0.shape())?;
        if !(gamma > 0.0) || !(beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tuner gains must be positive (gamma = {gamma}, beta = {beta})"
            )));
        }
        let bound = mu_lower_bound(gamma, beta, &p, &b_p);
        if !(mu >= bound) {
            return Err(Error::InvalidArgument(format!(
                "mu = {mu} is below its lower bound {bound}"
            )));
        }
        let lam_block = theta_hat0.columns(n_x + n_u, n_u);
        for i in 0..n_u {
            for j in 0..n_u {
                if i != j && lam_block[(i, j)] != 0.0 {
                    return Err(Error::InvalidArgument(
                        "lambda block of the initial estimate must be diagonal".into(),
                    ));
                }
            }
        }
        Ok(Self {
            xi: theta_hat0.clone(),
            theta_hat: theta_hat0,
            e_delta: Vector::zeros(n_x),
            gamma,
            beta,
            mu,
            p,
            b_p,
        })
    }

    pub fn n_x(&self) -> usize {
        self.b_p.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b_p.ncols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn p(&self) -> &Mat {
        &self.p
    }

    pub fn b_p(&self) -> &Mat {
        &self.b_p
    }

    pub fn k_x(&self) -> Mat {
        self.theta_hat.columns(0, self.n_x()).into_owned()
    }

    pub fn k_r(&self) -> Mat {
        self.theta_hat.columns(self.n_x(), self.n_u()).into_owned()
    }

    pub fn lambda_hat(&self) -> Vector {
        self.theta_hat
            .columns(self.n_x() + self.n_u(), self.n_u())
            .diagonal()
    }

    /// Number of scalars in the packed `(e_Δ, Ξ_a, Θ̂_a)` state.
    fn packed_len(&self) -> usize {
        self.n_x() + 2 * self.theta_hat.len()
    }

    fn pack_into(&self, out: &mut [f64]) {
        let n = self.n_x();
        let m = self.theta_hat.len();
        out[..n].copy_from_slice(self.e_delta.as_slice());
        out[n..n + m].copy_from_slice(self.xi.as_slice());
        out[n + m..n + 2 * m].copy_from_slice(self.theta_hat.as_slice());
    }

    fn unpack_from(&mut self, src: &[f64]) {
        let n = self.n_x();
        let m = self.theta_hat.len();
        self.e_delta.as_mut_slice().copy_from_slice(&src[..n]);
        self.xi.as_mut_slice().copy_from_slice(&src[n..n + m]);
        self.theta_hat
            .as_mut_slice()
            .copy_from_slice(&src[n + m..n + 2 * m]);
    }
}

pub fn mu_lower_bound(gamma: f64, beta: f64, p: &Mat, b_p: &Mat) -> f64 {
    2.0 * gamma / beta * (p * b_p).norm_squared()
}

/// `Φ_a = [x_pᵀ, rᵀ, −Δuᵀ]ᵀ`
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedRegressor {
    pub phi_a: Vector,
    n_phi: usize,
}

impl AugmentedRegressor {
    pub fn new(x_p: &Vector, r: &Vector, du: &Vector) -> Self {
        let n_phi = x_p.len() + r.len();
        let mut phi_a = Vector::zeros(n_phi + du.len());
        phi_a.rows_mut(0, x_p.len()).copy_from(x_p);
        phi_a.rows_mut(x_p.len(), r.len()).copy_from(r);
        phi_a.rows_mut(n_phi, du.len()).copy_from(&(-du));
        Self { phi_a, n_phi }
    }

    /// `Φ = [x_pᵀ, rᵀ]ᵀ`
    pub fn phi(&self) -> Vector {
        self.phi_a.rows(0, self.n_phi).into_owned()
    }

    /// `N_t = 1 + μ Φ_aᵀΦ_a`
    pub fn normalization(&self, mu: f64) -> f64 {
        1.0 + mu * self.phi_a.norm_squared()
    }
}

/// Control law `u = K̂_x x_p + K̂_r r`, before saturation.
pub fn msac_control(state: &TunerState, x_p: &Vector, r: &Vector) -> Vector {
    let n_x = state.n_x();
    let n_u = state.n_u();
    state.theta_hat.columns(0, n_x) * x_p + state.theta_hat.columns(n_x, n_u) * r
}

/// `ė_Δ = A_m e_Δ + B_p diag(λ̂) Δu`
pub fn aux_error_deriv(state: &TunerState, model: &ReferenceModel, du: &Vector) -> Vector {
    let lam = state.lambda_hat();
    &model.a * &state.e_delta + &state.b_p * du.component_mul(&lam)
}

/// `e_u = (x_p − x_m) − e_Δ`
pub fn augmented_error(state: &TunerState, x_p: &Vector, x_m: &Vector) -> Vector {
    x_p - x_m - &state.e_delta
}

/// Returns `(Ξ̇_a, Θ̂̇_a)`.
pub fn tuner_deriv(state: &TunerState, e_u: &Vector, reg: &AugmentedRegressor) -> (Mat, Mat) {
    let n_x = state.n_x();
    let n_u = state.n_u();
    let weighted = state.b_p.transpose() * (&state.p * e_u);
    let mut d_xi = (weighted * reg.phi_a.transpose()) * (-state.gamma);
    let mut lam_block = d_xi.columns_mut(n_x + n_u, n_u);
    for i in 0..n_u {
        for j in 0..n_u {
            if i != j {
                lam_block[(i, j)] = 0.0;
            }
        }
    }
    let n_t = reg.normalization(state.mu);
    let d_theta = (&state.theta_hat - &state.xi) * (-state.beta * n_t);
    (d_xi, d_theta)
}

/// Applies the column weighting of the Lyapunov candidate: Λ on the
/// `[K_x, K_r]` columns, identity on the λ columns, and returns
/// `Tr(Dᵀ W(D))`.
fn weighted_trace(d: &Mat, lambda: &Vector, n_theta_cols: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..d.ncols() {
        for i in 0..d.nrows() {
            let w = if j < n_theta_cols { lambda[i] } else { 1.0 };
            acc += w * d[(i, j)] * d[(i, j)];
        }
    }
    acc
}

/// Lyapunov candidate
/// `V = e_uᵀPe_u + (1/γ)⟨Ξ_a−Θ_a, Ξ_a−Θ_a⟩_Λ + (1/γ)⟨Θ̂_a−Ξ_a, Θ̂_a−Ξ_a⟩_Λ`.
pub fn lyapunov_value(state: &TunerState, e_u: &Vector, oracle: &IdealGains) -> f64 {
    let theta_a = oracle.theta_a();
    let n_theta_cols = state.n_x() + state.n_u();
    let tracking = e_u.dot(&(&state.p * e_u));
    let far = weighted_trace(&(&state.xi - &theta_a), &oracle.lambda, n_theta_cols);
    let near = weighted_trace(&(&state.theta_hat - &state.xi), &oracle.lambda, n_theta_cols);
    tracking + (far + near) / state.gamma
}

/// Plant estimate recovered from the adapted gains:
/// `Â_p = A_m − B_p Λ̂ K̂_x`, `Λ̂ = diag(λ̂)`.
pub fn extract_parameters(
    state: &TunerState,
    model: &ReferenceModel,
    b_p: &Mat,
) -> Result<ModelEstimate> {
    let lam = state.lambda_hat();
    if let Some((index, &value)) = lam.iter().enumerate().find(|(_, l)| !(**l > 0.0)) {
        return Err(Error::NonPositiveLambdaEstimate { index, value });
    }
    let a_hat = &model.a - b_p * Mat::from_diagonal(&lam) * state.k_x();
    ModelEstimate::new(a_hat, lam, b_p.clone())
}

/// Result of a closed-loop adaptive run.
#[derive(Debug, Clone)]
pub struct MsacRun {
    pub log: SimLog,
    /// `Φ_a` at every log row.
    pub regressor: Vec<Vector>,
    pub tuner: TunerState,
    pub x_p: Vector,
    pub x_m: Vector,
}

/// Layout of the coupled state `(x_p, x_m, e_Δ, Ξ_a, Θ̂_a)`.
struct Coupled<'a> {
    plant: &'a PlantSpec,
    model: &'a ReferenceModel,
    exo: &'a ExoSignal,
    template: TunerState,
}

struct Signals {
    x_d: Vector,
    r: Vector,
    u: Vector,
    u_sat: Vector,
    du: Vector,
}

impl Coupled<'_> {
    fn n_x(&self) -> usize {
        self.plant.n_x()
    }

    fn split(&self, z: &Vector) -> (Vector, Vector, TunerState) {
        let n = self.n_x();
        let mut tuner = self.template.clone();
        tuner.unpack_from(&z.as_slice()[2 * n..]);
        (z.rows(0, n).into_owned(), z.rows(n, n).into_owned(), tuner)
    }

    fn join(&self, x_p: &Vector, x_m: &Vector, tuner: &TunerState) -> Vector {
        let n = self.n_x();
        let mut z = Vector::zeros(2 * n + tuner.packed_len());
        z.rows_mut(0, n).copy_from(x_p);
        z.rows_mut(n, n).copy_from(x_m);
        tuner.pack_into(&mut z.as_mut_slice()[2 * n..]);
        z
    }

    fn signals(&self, t: f64, x_p: &Vector, tuner: &TunerState) -> Signals {
        let x_d = self.exo.value(t);
        let r = self.model.reference_input(&x_d, &self.exo.derivative(t));
        let u = msac_control(tuner, x_p, &r);
        let u_sat = saturate(&u, self.plant.u_max);
        let du = &u_sat - &u;
        Signals {
            x_d,
            r,
            u,
            u_sat,
            du,
        }
    }

    fn deriv(&self, t: f64, z: &Vector) -> Vector {
        let (x_p, x_m, tuner) = self.split(z);
        let s = self.signals(t, &x_p, &tuner);
        let dx_p = &self.plant.a * &x_p + self.plant.b_lambda() * &s.u_sat;
        let dx_m = self.model.deriv(&x_m, &s.r);
        let de_delta = aux_error_deriv(&tuner, self.model, &s.du);
        let e_u = augmented_error(&tuner, &x_p, &x_m);
        let reg = AugmentedRegressor::new(&x_p, &s.r, &s.du);
        let (d_xi, d_theta) = tuner_deriv(&tuner, &e_u, &reg);

        let mut rate = tuner.clone();
        rate.e_delta = de_delta;
        rate.xi = d_xi;
        rate.theta_hat = d_theta;
        self.join(&dx_p, &dx_m, &rate)
    }
}

/// Runs the adaptive closed loop over `grid` from `(plant.x0, x_m0)`.
///
/// When `oracle` is given, each log row carries `‖Θ̃_a‖` and the Lyapunov
/// value; otherwise those columns are NaN. The controller itself never sees
/// the oracle.
pub fn simulate_msac(
    plant: &PlantSpec,
    model: &ReferenceModel,
    exo: &ExoSignal,
    tuner: TunerState,
    x_m0: &Vector,
    grid: &TimeGrid,
    oracle: Option<&IdealGains>,
) -> Result<MsacRun> {
    simulate_msac_from(plant, model, exo, tuner, &plant.x0, x_m0, grid, oracle)
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_msac_from(
    plant: &PlantSpec,
    model: &ReferenceModel,
    exo: &ExoSignal,
    tuner: TunerState,
    x_p0: &Vector,
    x_m0: &Vector,
    grid: &TimeGrid,
    oracle: Option<&IdealGains>,
) -> Result<MsacRun> {
    let n_x = plant.n_x();
    check_len("initial plant state", n_x, x_p0.len())?;
    check_len("initial reference state", n_x, x_m0.len())?;
    check_len("exogenous signal", n_x, exo.dim())?;
    check_dims("tuner B_p", plant.b.shape(), tuner.b_p().shape())?;

    let sys = Coupled {
        plant,
        model,
        exo,
        template: tuner.clone(),
    };
    let theta_a = oracle.map(IdealGains::theta_a);
    let mut log = SimLog::new(n_x, plant.n_u());
    let mut regressor = Vec::with_capacity(grid.len());

    let mut z = sys.join(x_p0, x_m0, &tuner);
    for k in 0..grid.len() {
        let t = grid.time(k);
        if k > 0 {
            z = rk4_step(|t, z| sys.deriv(t, z), grid.time(k - 1), &z, grid.step())?;
        }
        let (x_p, x_m, tuner) = sys.split(&z);
        let s = sys.signals(t, &x_p, &tuner);
        let (theta_err, lyapunov) = match (oracle, &theta_a) {
            (Some(o), Some(theta_a)) => {
                let e_u = augmented_error(&tuner, &x_p, &x_m);
                (
                    (&tuner.theta_hat - theta_a).norm(),
                    lyapunov_value(&tuner, &e_u, o),
                )
            }
            _ => (f64::NAN, f64::NAN),
        };
        regressor.push(AugmentedRegressor::new(&x_p, &s.r, &s.du).phi_a);
        log.push(LogRow {
            t,
            x_p,
            x_m,
            x_d: s.x_d,
            u: s.u,
            u_sat: s.u_sat,
            du: s.du,
            theta_err,
            lyapunov,
            phase: Phase::Msac,
        })?;
    }

    let (x_p, x_m, tuner) = sys.split(&z);
    Ok(MsacRun {
        log,
        regressor,
        tuner,
        x_p,
        x_m,
    })
}
