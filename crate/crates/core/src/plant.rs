//! The true plant with ball-saturated input, the reference model it is asked
//! to follow, and the exogenous signal both are measured against.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, check_len, Error, Result};
use crate::numeric::{is_hurwitz, max_real_eigenvalue, min_eig_sym, Mat, Vector};

/// Radial projection of `u` onto the closed ball of radius `u_max`.
pub fn saturate(u: &Vector, u_max: f64) -> Vector {
    let norm = u.norm();
    if norm <= u_max {
        u.clone()
    } else {
        u * (u_max / norm)
    }
}

/// Ground truth for the simulated system `ẋ = A x + B Λ sat(u)`.
///
/// Controllers receive `b` and `u_max` only; `a` and `lambda` are read by the
/// simulator and by oracle diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub a: Mat,
    pub b: Mat,
    /// Diagonal of Λ.
    pub lambda: Vector,
    pub u_max: f64,
    pub x0: Vector,
}

impl PlantSpec {
    pub fn new(a: Mat, b: Mat, lambda: Vector, u_max: f64, x0: Vector) -> Result<Self> {
        let n_x = a.nrows();
        let n_u = b.ncols();
        check_dims("plant A", (n_x, n_x), a.shape())?;
        check_dims("plant B", (n_x, n_u), b.shape())?;
        check_len("plant lambda", n_u, lambda.len())?;
        check_len("plant x0", n_x, x0.len())?;
        if let Some((i, l)) = lambda.iter().enumerate().find(|(_, l)| !(**l > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "lambda[{i}] = {l} must be strictly positive"
            )));
        }
        if !(u_max > 0.0) || !u_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "u_max must be positive and finite, got {u_max}"
            )));
        }
        Ok(Self {
            a,
            b,
            lambda,
            u_max,
            x0,
        })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn lambda_matrix(&self) -> Mat {
        Mat::from_diagonal(&self.lambda)
    }

    /// `B Λ`, the effective input matrix.
    pub fn b_lambda(&self) -> Mat {
        &self.b * self.lambda_matrix()
    }

    /// `ẋ_p = A x_p + B Λ sat(u)`.
    pub fn deriv(&self, x_p: &Vector, u: &Vector) -> Vector {
        &self.a * x_p + self.b_lambda() * saturate(u, self.u_max)
    }
}

/// `plant_deriv` as a free function over a spec.
pub fn plant_deriv(spec: &PlantSpec, x_p: &Vector, u: &Vector) -> Vector {
    spec.deriv(x_p, u)
}

/// Known reference system `ẋ_m = A_m x_m + B_m r` with Hurwitz `A_m` and full
/// column rank `B_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    pub a: Mat,
    pub b: Mat,
    /// `(B_mᵀ B_m)⁻¹ B_mᵀ`
    pinv: Mat,
}

impl ReferenceModel {
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        let n_x = a.nrows();
        check_dims("reference A", (n_x, n_x), a.shape())?;
        check_dims("reference B", (n_x, b.ncols()), b.shape())?;
        if !is_hurwitz(&a)? {
            return Err(Error::NotHurwitz {
                max_real_part: max_real_eigenvalue(&a)?,
            });
        }
        let gram = b.transpose() * &b;
        if b.ncols() > n_x || min_eig_sym(&gram)? <= 1e-12 * gram.amax().max(1.0) {
            return Err(Error::InvalidArgument(
                "reference B must have full column rank".into(),
            ));
        }
        let pinv = gram
            .try_inverse()
            .ok_or_else(|| Error::SolveFailed("B_mᵀB_m is singular".into()))?
            * b.transpose();
        Ok(Self { a, b, pinv })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    /// Reference input that makes `x_m - x_d` obey `ė = A_m e`:
    /// `r = (B_mᵀB_m)⁻¹ B_mᵀ (ẋ_d − A_m x_d)`.
    pub fn reference_input(&self, x_d: &Vector, xdot_d: &Vector) -> Vector {
        &self.pinv * (xdot_d - &self.a * x_d)
    }

    pub fn deriv(&self, x_m: &Vector, r: &Vector) -> Vector {
        &self.a * x_m + &self.b * r
    }

    /// Upper bound on `‖r(t)‖` over all `t` for the given signal.
    pub fn r_bound(&self, exo: &ExoSignal) -> f64 {
        let pinv_norm = self.pinv.norm();
        let (mut amp, mut rate) = (0.0, 0.0);
        for ch in &exo.channels {
            let a: f64 = ch.iter().map(|s| s.amplitude.abs()).sum();
            let w: f64 = ch.iter().map(|s| (s.amplitude * s.omega).abs()).sum();
            amp += a * a;
            rate += w * w;
        }
        pinv_norm * (self.a.norm() * amp.sqrt() + rate.sqrt())
    }
}

pub fn reference_input(model: &ReferenceModel, x_d: &Vector, xdot_d: &Vector) -> Vector {
    model.reference_input(x_d, xdot_d)
}

pub fn reference_deriv(model: &ReferenceModel, x_m: &Vector, r: &Vector) -> Vector {
    model.deriv(x_m, r)
}

/// `amplitude · sin(omega · t + phase)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn new(amplitude: f64, omega: f64, phase: f64) -> Self {
        Self {
            amplitude,
            omega,
            phase,
        }
    }
}

/// Sum-of-sinusoids signal `x_d(t)`, one list of terms per channel, with its
/// analytic derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct ExoSignal {
    channels: Vec<Vec<Sinusoid>>,
}

impl ExoSignal {
    pub fn new(channels: Vec<Vec<Sinusoid>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidArgument("signal needs at least one channel".into()));
        }
        let finite = channels
            .iter()
            .flatten()
            .all(|s| s.amplitude.is_finite() && s.omega.is_finite() && s.phase.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("signal terms must be finite".into()));
        }
        let signal = Self { channels };
        signal.check_derivative()?;
        Ok(signal)
    }

    /// Channel `i` held at `values[i]`.
    pub fn constant(values: &[f64]) -> Result<Self> {
        Self::new(
            values
                .iter()
                .map(|&v| vec![Sinusoid::new(v, 0.0, std::f64::consts::FRAC_PI_2)])
                .collect(),
        )
    }

    fn check_derivative(&self) -> Result<()> {
        const H: f64 = 1e-4;
        for &t in &[0.0, 0.37, 1.3, 2.9] {
            let fd = (self.value(t + H) - self.value(t - H)) / (2.0 * H);
            let exact = self.derivative(t);
            for (i, ch) in self.channels.iter().enumerate() {
                let scale: f64 = ch
                    .iter()
                    .map(|s| s.amplitude.abs() * (1.0 + s.omega.abs().powi(3)))
                    .sum();
                if (fd[i] - exact[i]).abs() > 1e-6 * (1.0 + scale) {
                    return Err(Error::InvalidArgument(format!(
                        "derivative of channel {i} disagrees with finite differences at t = {t}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Vec<Sinusoid>] {
        &self.channels
    }

    pub fn value(&self, t: f64) -> Vector {
        Vector::from_iterator(
            self.channels.len(),
            self.channels.iter().map(|ch| {
                ch.iter()
                    .map(|s| s.amplitude * (s.omega * t + s.phase).sin())
                    .sum::<f64>()
            }),
        )
    }

    pub fn derivative(&self, t: f64) -> Vector {
        Vector::from_iterator(
            self.channels.len(),
            self.channels.iter().map(|ch| {
                ch.iter()
                    .map(|s| s.amplitude * s.omega * (s.omega * t + s.phase).cos())
                    .sum::<f64>()
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    fn demo_plant(u_max: f64) -> PlantSpec {
        PlantSpec::new(
            Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            Mat::identity(2, 2),
            v(&[1.0, 1.0]),
            u_max,
            v(&[0.0, 0.0]),
        )
        .unwrap()
    }

    fn demo_model() -> ReferenceModel {
        ReferenceModel::new(
            Mat::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -2.0]),
            Mat::identity(2, 2),
        )
        .unwrap()
    }

    fn demo_signal() -> ExoSignal {
        let ch = |ws: &[f64]| ws.iter().map(|&w| Sinusoid::new(1.0, w, 0.0)).collect();
        ExoSignal::new(vec![ch(&[1.0, 3.0, 5.0, 7.0]), ch(&[2.0, 4.0, 6.0])]).unwrap()
    }

    #[test]
    fn saturate_examples() {
        assert_eq!(saturate(&v(&[3.0, 4.0]), 8.0), v(&[3.0, 4.0]));
        let s = saturate(&v(&[6.0, 8.0]), 8.0);
        assert!((s - v(&[4.8, 6.4])).norm() < 1e-15);
        assert_eq!(saturate(&v(&[0.0, 0.0]), 1.0), v(&[0.0, 0.0]));
    }

    #[test]
    fn plant_deriv_examples() {
        let p = demo_plant(8.0);
        assert_eq!(plant_deriv(&p, &v(&[1.0, 0.0]), &v(&[0.0, 0.0])), v(&[1.0, 0.0]));
        assert_eq!(plant_deriv(&p, &v(&[0.0, 0.0]), &v(&[0.0, 0.0])), v(&[0.0, 0.0]));
        let d = plant_deriv(&p, &v(&[0.0, 0.0]), &v(&[6.0, 8.0]));
        assert!((d - v(&[4.8, 6.4])).norm() < 1e-15);
    }

    #[test]
    fn plant_rejects_bad_structure() {
        let a = Mat::identity(2, 2);
        let b = Mat::identity(2, 2);
        assert!(PlantSpec::new(a.clone(), b.clone(), v(&[1.0, 0.0]), 1.0, v(&[0.0, 0.0])).is_err());
        assert!(PlantSpec::new(a.clone(), b.clone(), v(&[1.0, 1.0]), 0.0, v(&[0.0, 0.0])).is_err());
        assert!(PlantSpec::new(a, b, v(&[1.0]), 1.0, v(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn reference_model_validation() {
        let unstable = ReferenceModel::new(Mat::identity(2, 2), Mat::identity(2, 2));
        assert!(matches!(unstable, Err(Error::NotHurwitz { .. })));
        let rank_deficient = ReferenceModel::new(
            -Mat::identity(2, 2),
            Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
        );
        assert!(rank_deficient.is_err());
    }

    #[test]
    fn reference_input_examples() {
        let m = demo_model();
        assert_eq!(m.reference_input(&v(&[0.0, 0.0]), &v(&[0.0, 0.0])), v(&[0.0, 0.0]));

        let x = demo_signal();
        assert_eq!(x.value(0.0), v(&[0.0, 0.0]));
        assert_eq!(x.derivative(0.0), v(&[16.0, 12.0]));
        let r = m.reference_input(&x.value(0.0), &x.derivative(0.0));
        assert!((r - v(&[16.0, 12.0])).norm() < 1e-12);

        let r = m.reference_input(&v(&[1.0, 0.0]), &v(&[0.0, 0.0]));
        assert!((r - v(&[1.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn reference_input_uses_least_squares_for_tall_b() {
        let m = ReferenceModel::new(
            Mat::from_row_slice(3, 3, &[-1.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0, -3.0]),
            Mat::from_row_slice(3, 1, &[1.0, 1.0, 0.0]),
        )
        .unwrap();
        let r = m.reference_input(&v(&[0.0, 0.0, 0.0]), &v(&[1.0, 3.0, 5.0]));
        assert!((r[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reference_deriv_examples() {
        let m = demo_model();
        assert_eq!(m.deriv(&v(&[0.0, 0.0]), &v(&[0.0, 0.0])), v(&[0.0, 0.0]));
        assert_eq!(m.deriv(&v(&[1.0, 1.0]), &v(&[0.0, 0.0])), v(&[0.0, -2.0]));
        assert_eq!(m.deriv(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), v(&[1.0, 0.0]));
    }

    #[test]
    fn reference_model_tracks_signal_when_started_on_it() {
        use crate::numeric::{integrate_forward, TimeGrid};
        let m = demo_model();
        let x = demo_signal();
        let grid = TimeGrid::new(0.0, 10.0, 1e-3).unwrap();
        let traj = integrate_forward(
            |t, xm| m.deriv(xm, &m.reference_input(&x.value(t), &x.derivative(t))),
            &grid,
            &x.value(0.0),
        )
        .unwrap();
        let worst = traj
            .iter()
            .enumerate()
            .map(|(k, xm)| (xm - x.value(grid.time(k))).norm())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "worst {worst}");

        // off the signal, the error decays at the slowest A_m rate
        let start = v(&[1.0, -1.0]);
        let traj = integrate_forward(
            |t, xm| m.deriv(xm, &m.reference_input(&x.value(t), &x.derivative(t))),
            &grid,
            &start,
        )
        .unwrap();
        let e0 = (&start - x.value(0.0)).norm();
        for (k, xm) in traj.iter().enumerate().step_by(500) {
            let t = grid.time(k);
            let e = (xm - x.value(t)).norm();
            assert!(e <= 3.0 * e0 * (-t).exp() + 1e-9, "t {t}: {e}");
        }
    }

    #[test]
    fn signal_rejects_wrong_derivative_and_handles_constants() {
        let c = ExoSignal::constant(&[1.5, -2.0]).unwrap();
        assert!((c.value(3.7) - v(&[1.5, -2.0])).norm() < 1e-15);
        assert_eq!(c.derivative(1.0), v(&[0.0, 0.0]));
        assert!(ExoSignal::new(vec![]).is_err());
        assert!(ExoSignal::new(vec![vec![Sinusoid::new(f64::NAN, 1.0, 0.0)]]).is_err());
    }

    #[test]
    fn r_bound_dominates_samples() {
        let m = demo_model();
        let x = demo_signal();
        let bound = m.r_bound(&x);
        for k in 0..2000 {
            let t = k as f64 * 0.01;
            assert!(m.reference_input(&x.value(t), &x.derivative(t)).norm() <= bound);
        }
    }

    proptest! {
        #[test]
        fn saturate_stays_in_ball_and_is_idempotent(
            u in prop::collection::vec(-100.0f64..100.0, 1..=8),
            u_max in 0.01f64..50.0,
        ) {
            let u = Vector::from_vec(u);
            let s = saturate(&u, u_max);
            prop_assert!(s.norm() <= u_max * (1.0 + 1e-12));
            let twice = saturate(&s, u_max);
            prop_assert!((twice - &s).norm() <= 1e-12 * u_max);
        }
    }
}
