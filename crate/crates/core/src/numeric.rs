//! Fixed-step integration and the handful of dense linear-algebra routines the
//! controllers need.
//!
//! Everything here works on dynamically sized `nalgebra` matrices. The state
//! dimensions in this crate are small (n ≤ 16), so allocation per stage is not
//! a concern.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{check_dims, Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Tolerance used when deciding that a matrix is symmetric enough to be
/// symmetrized silently.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Uniform time grid `t_start + k·step`, `k = 0..nodes`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    step: f64,
    nodes: usize,
}

impl TimeGrid {
    /// Grid covering `[t_start, t_end]`. The node count is
    /// `round((t_end - t_start) / step) + 1`, so the last node may differ from
    /// `t_end` by at most half a step.
    pub fn new(t_start: f64, t_end: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid step must be positive and finite, got {step}"
            )));
        }
        if !t_start.is_finite() || !t_end.is_finite() || t_end < t_start {
            return Err(Error::InvalidArgument(format!(
                "grid span [{t_start}, {t_end}] is empty or not finite"
            )));
        }
        let intervals = ((t_end - t_start) / step).round() as usize;
        Ok(Self {
            t_start,
            step,
            nodes: intervals + 1,
        })
    }

    pub fn with_nodes(t_start: f64, step: f64, nodes: usize) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::InvalidArgument("grid needs at least one node".into()));
        }
        let mut grid = Self::new(t_start, t_start, step)?;
        grid.nodes = nodes;
        Ok(grid)
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.step
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.nodes - 1)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.nodes == 0
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nodes).map(move |k| self.time(k))
    }

    /// Index of the node at `t`, if `t` lies on the grid up to a small
    /// fraction of a step.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let pos = (t - self.t_start) / self.step;
        let k = pos.round();
        if k < 0.0 || k as usize >= self.nodes || (pos - k).abs() > 1e-6 {
            return None;
        }
        Some(k as usize)
    }

    /// Segment index and interpolation weight for `t`, clamped to the grid.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        if self.nodes == 1 {
            return (0, 0.0);
        }
        let pos = ((t - self.t_start) / self.step).clamp(0.0, (self.nodes - 1) as f64);
        let k = pos.round();
        if (pos - k).abs() < 1e-9 {
            let k = k as usize;
            return if k == self.nodes - 1 { (k - 1, 1.0) } else { (k, 0.0) };
        }
        let k = (pos.floor() as usize).min(self.nodes - 2);
        (k, pos - k as f64)
    }
}

fn ensure_finite(v: &Vector, t: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalBlowup { t })
    }
}

/// One classical fourth-order Runge–Kutta step. `h` may be negative to step
/// backwards in time.
pub fn rk4_step<F>(f: F, t: f64, x: &Vector, h: f64) -> Result<Vector>
where
    F: Fn(f64, &Vector) -> Vector,
{
    let half = 0.5 * h;
    let k1 = f(t, x);
    ensure_finite(&k1, t)?;
    let k2 = f(t + half, &(x + &k1 * half));
    ensure_finite(&k2, t + half)?;
    let k3 = f(t + half, &(x + &k2 * half));
    ensure_finite(&k3, t + half)?;
    let k4 = f(t + h, &(x + &k3 * h));
    ensure_finite(&k4, t + h)?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    ensure_finite(&next, t + h)?;
    Ok(next)
}

/// Integrates forward from `x0` at `grid.t_start()`, returning the state at
/// every node.
pub fn integrate_forward<F>(f: F, grid: &TimeGrid, x0: &Vector) -> Result<Vec<Vector>>
where
    F: Fn(f64, &Vector) -> Vector,
{
    ensure_finite(x0, grid.t_start())?;
    let mut table = Vec::with_capacity(grid.len());
    table.push(x0.clone());
    for k in 1..grid.len() {
        let next = rk4_step(&f, grid.time(k - 1), &table[k - 1], grid.step())?;
        table.push(next);
    }
    Ok(table)
}

/// Solves a terminal-value problem: starts from `x_terminal` at
/// `grid.t_end()` and steps down to `grid.t_start()`. Entry `k` of the result
/// is the state at node `k`.
pub fn integrate_backward<F>(f: F, grid: &TimeGrid, x_terminal: &Vector) -> Result<Vec<Vector>>
where
    F: Fn(f64, &Vector) -> Vector,
{
    let n = grid.len();
    ensure_finite(x_terminal, grid.t_end())?;
    let mut table = vec![Vector::zeros(0); n];
    table[n - 1] = x_terminal.clone();
    for k in (1..n).rev() {
        table[k - 1] = rk4_step(&f, grid.time(k), &table[k], -grid.step())?;
    }
    Ok(table)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &Mat) -> f64 {
    (m - m.transpose()).amax()
}

/// Symmetrizes `m` after checking that it is symmetric to within `tol`
/// relative to its largest entry.
pub fn symmetric(m: &Mat, tol: f64) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            context: "symmetric matrix",
            expected: "square".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    let asymmetry = max_asymmetry(m);
    if asymmetry > tol * m.amax().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry });
    }
    Ok(symmetrize(m))
}

/// Largest real part over the eigenvalues of a square matrix.
///
/// Closed form up to 2×2, Schur (QR) iteration above that.
pub fn max_real_eigenvalue(a: &Mat) -> Result<f64> {
    check_dims("eigenvalues", (a.nrows(), a.nrows()), a.shape())?;
    match a.nrows() {
        0 => Err(Error::InvalidArgument("empty matrix".into())),
        1 => Ok(a[(0, 0)]),
        2 => {
            let half_trace = 0.5 * (a[(0, 0)] + a[(1, 1)]);
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            let disc = half_trace * half_trace - det;
            if disc < 0.0 {
                Ok(half_trace)
            } else {
                Ok(half_trace + disc.sqrt())
            }
        }
        _ => {
            let schur = Schur::try_new(a.clone(), 1e-10, 100_000)
                .ok_or_else(|| Error::SolveFailed("QR iteration did not converge".into()))?;
            Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max))
        }
    }
}

pub fn is_hurwitz(a: &Mat) -> Result<bool> {
    Ok(max_real_eigenvalue(a)? < 0.0)
}

/// Solves `AᵀP + PA = -Q` for symmetric positive-definite `P` by vectorizing
/// into an n²×n² linear system.
pub fn solve_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    check_dims("lyapunov A", (n, n), a.shape())?;
    check_dims("lyapunov Q", (n, n), q.shape())?;
    let max_re = max_real_eigenvalue(a)?;
    if max_re >= 0.0 {
        return Err(Error::NotHurwitz {
            max_real_part: max_re,
        });
    }
    let q = symmetric(q, 1e-9)?;
    if min_eig_sym(&q)? <= 0.0 {
        return Err(Error::InvalidArgument(
            "lyapunov weight Q must be positive definite".into(),
        ));
    }

    let eye = Mat::identity(n, n);
    let at = a.transpose();
    // column-major vec: vec(AᵀP) = (I ⊗ Aᵀ) vec(P), vec(PA) = (Aᵀ ⊗ I) vec(P)
    let system = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -Vector::from_column_slice(q.as_slice());
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SolveFailed("vectorized Lyapunov system is singular".into()))?;
    let p = symmetrize(&Mat::from_column_slice(n, n, sol.as_slice()));
    Ok(p)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig_sym(m: &Mat) -> Result<f64> {
    let sym = symmetric(m, 1e-9)?;
    if sym.nrows() == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    Ok(SymmetricEigen::new(sym).eigenvalues.min())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn am() -> Mat {
        Mat::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -2.0])
    }

    // closed-form e^{A_m t}; A_m is upper triangular with eigenvalues -1, -2
    fn expm_am(t: f64) -> Mat {
        let (e1, e2) = ((-t).exp(), (-2.0 * t).exp());
        Mat::from_row_slice(2, 2, &[e1, e1 - e2, 0.0, e2])
    }

    #[test]
    fn grid_node_count_and_times() {
        let g = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g.time(3), 0.30000000000000004);
        assert!((g.t_end() - 1.0).abs() < 1e-12);
        assert_eq!(g.node_index(0.5), Some(5));
        assert_eq!(g.node_index(0.55), None);
        assert_eq!(TimeGrid::new(2.0, 2.0, 0.1).unwrap().len(), 1);
        assert!(TimeGrid::new(0.0, 1.0, 0.0).is_err());
        assert!(TimeGrid::new(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn grid_locate_interpolates_and_clamps() {
        let g = TimeGrid::new(0.0, 1.0, 0.25).unwrap();
        let (k, w) = g.locate(0.375);
        assert_eq!(k, 1);
        assert!((w - 0.5).abs() < 1e-12);
        assert_eq!(g.locate(1.0), (3, 1.0));
        assert_eq!(g.locate(5.0), (3, 1.0));
        assert_eq!(g.locate(-1.0), (0, 0.0));
    }

    #[test]
    fn rk4_scalar_decay() {
        let x = Vector::from_element(1, 1.0);
        let next = rk4_step(|_, x| -x, 0.0, &x, 0.1).unwrap();
        assert!((next[0] - (-0.1f64).exp()).abs() < 1e-6);
        assert!((next[0] - 0.904837).abs() < 1e-6);
    }

    #[test]
    fn rk4_zero_field_is_exact() {
        let v = Vector::from_vec(vec![1.5, -2.25, 3.0]);
        let next = rk4_step(|_, x| Vector::zeros(x.len()), 0.0, &v, 0.37).unwrap();
        assert_eq!(next, v);
    }

    #[test]
    fn rk4_linear_system_matches_exponential() {
        let a = am();
        let x0 = Vector::from_vec(vec![1.0, 1.0]);
        let grid = TimeGrid::new(0.0, 1.0, 1e-3).unwrap();
        let table = integrate_forward(|_, x| &a * x, &grid, &x0).unwrap();
        let exact = expm_am(1.0) * &x0;
        assert!((table.last().unwrap() - &exact).norm() < 1e-6);
        // x₂ = e^{−2t}, x₁ = 2e^{−t} − e^{−2t}
        assert!((exact[0] - (2.0 * (-1.0f64).exp() - (-2.0f64).exp())).abs() < 1e-14);
        assert!((exact[1] - (-2.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn rk4_reports_blowup_time() {
        let x = Vector::from_element(1, 1.0);
        let err = rk4_step(|t, x| x * (1.0 / (t - 0.05)), 0.0, &x, 0.1).unwrap_err();
        assert!(matches!(err, Error::NumericalBlowup { t } if (t - 0.05).abs() < 1e-12));
    }

    #[test]
    fn rk4_global_error_is_fourth_order() {
        let a = am();
        let x0 = Vector::from_vec(vec![1.0, -0.5]);
        let exact = expm_am(2.0) * &x0;
        let err = |h: f64| {
            let grid = TimeGrid::new(0.0, 2.0, h).unwrap();
            let table = integrate_forward(|_, x| &a * x, &grid, &x0).unwrap();
            (table.last().unwrap() - &exact).norm()
        };
        let (coarse, fine) = (err(0.1), err(0.05));
        assert!(coarse / fine >= 14.0, "ratio {}", coarse / fine);
    }

    #[test]
    fn backward_constant_and_ramp() {
        let grid = TimeGrid::new(0.0, 1.0, 1e-3).unwrap();
        let v = Vector::from_vec(vec![2.0, 3.0]);
        let table = integrate_backward(|_, x| Vector::zeros(x.len()), &grid, &v).unwrap();
        assert!(table.iter().all(|x| *x == v));

        let table =
            integrate_backward(|_, _| Vector::from_element(1, -1.0), &grid, &Vector::zeros(1))
                .unwrap();
        assert!((table[0][0] - 1.0).abs() < 1e-10);
        assert_eq!(table.len(), grid.len());
    }

    #[test]
    fn backward_scalar_riccati_reaches_algebraic_root() {
        let (a, b, q, r) = (1.0, 1.0, 20.0, 1.0);
        let grid = TimeGrid::new(0.0, 10.0, 1e-3).unwrap();
        let table = integrate_backward(
            |_, s| Vector::from_element(1, -q - 2.0 * a * s[0] + s[0] * s[0] * b * b / r),
            &grid,
            &Vector::zeros(1),
        )
        .unwrap();
        let root = 1.0 + 21f64.sqrt();
        assert!((table[0][0] - root).abs() < 1e-3);
        assert!((root - 5.58258).abs() < 1e-5);
    }

    #[test]
    fn backward_then_forward_returns_terminal_value() {
        let grid = TimeGrid::new(0.0, 3.0, 1e-3).unwrap();
        let field = |t: f64, x: &Vector| {
            Vector::from_vec(vec![x[1] + t.sin(), -x[0] - 0.3 * x[1] + (2.0 * t).cos()])
        };
        let terminal = Vector::from_vec(vec![0.7, -1.2]);
        let back = integrate_backward(field, &grid, &terminal).unwrap();
        let fwd = integrate_forward(field, &grid, &back[0]).unwrap();
        assert!((fwd.last().unwrap() - &terminal).norm() < 1e-6);
    }

    #[test]
    fn lyapunov_examples() {
        let p = solve_lyapunov(&(-Mat::identity(2, 2)), &(Mat::identity(2, 2) * 2.0)).unwrap();
        assert!((p - Mat::identity(2, 2)).norm() < 1e-12);

        let p = solve_lyapunov(&am(), &(Mat::identity(2, 2) * 2.0)).unwrap();
        let expected = Mat::from_row_slice(2, 2, &[1.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]);
        assert!((&p - expected).norm() < 1e-12);
        let residual = am().transpose() * &p + &p * am() + Mat::identity(2, 2) * 2.0;
        assert!(residual.norm() <= 1e-10);

        let err = solve_lyapunov(&Mat::identity(2, 2), &Mat::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::NotHurwitz { .. }));
    }

    #[test]
    fn lyapunov_random_hurwitz_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..1000 {
            let n = if case % 2 == 0 { 2 } else { 3 };
            let m = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let shift = max_real_eigenvalue(&m).unwrap() + rng.random_range(0.2..2.0);
            let a = m - Mat::identity(n, n) * shift;
            let l = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let q = &l * l.transpose() + Mat::identity(n, n) * 0.5;
            let p = solve_lyapunov(&a, &q).unwrap();
            let residual = a.transpose() * &p + &p * &a + &q;
            assert!(residual.norm() <= 1e-10, "case {case}: {}", residual.norm());
            assert_eq!(max_asymmetry(&p), 0.0);
            assert!(min_eig_sym(&p).unwrap() > 0.0);
        }
    }

    #[test]
    fn hurwitz_check_agrees_between_closed_form_and_qr() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = Mat::from_fn(2, 2, |_, _| rng.random_range(-2.0..2.0));
            let closed = max_real_eigenvalue(&a).unwrap();
            let schur = a.clone().complex_eigenvalues();
            let qr = schur.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
            assert!((closed - qr).abs() < 1e-8);
        }
        let a3 = Mat::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, -2.0, -1.0, 0.0, 0.0, 0.0, 0.5]);
        assert!((max_real_eigenvalue(&a3).unwrap() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn min_eig_examples() {
        assert_eq!(min_eig_sym(&Mat::identity(2, 2)).unwrap(), 1.0);
        let d = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 5.0]);
        assert!((min_eig_sym(&d).unwrap() - 2.0).abs() < 1e-12);
        let s = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((min_eig_sym(&s).unwrap() - 1.0).abs() < 1e-8);
        let bad = Mat::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(min_eig_sym(&bad), Err(Error::NotSymmetric { .. })));
    }
}
