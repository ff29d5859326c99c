//! Finite-horizon linear-quadratic tracking.
//!
//! For any affine law `u = K₁(t)x + K₀(t)` on `ẋ = Ax + BΛu` the cost-to-go is
//! `V(x,t) = xᵀS₂x + 2xᵀS₁ + S₀` with
//!
//! ```text
//! Ṡ₂ = −Q − S₂A_c − A_cᵀS₂ − K₁ᵀRK₁,           A_c = A + BΛK₁
//! Ṡ₁ = Q x_d − (S₂BΛK₀ + A_cᵀS₁ + K₁ᵀRK₀)
//! Ṡ₀ = −x_dᵀQx_d − 2S₁ᵀBΛK₀ − K₀ᵀRK₀
//! ```
//!
//! and terminal values `S₂ = Q_f`, `S₁ = −Q_f x_d`, `S₀ = x_dᵀQ_f x_d`. The
//! optimal law is the same system with `K₁ = −R⁻¹(BΛ)ᵀS₂` and
//! `K₀ = −R⁻¹(BΛ)ᵀS₁` substituted at every stage, so both solvers share one
//! right-hand side.

use std::io::Write;

use crate::error::{check_dims, check_len, Error, Result};
use crate::numeric::{integrate_backward, min_eig_sym, symmetric, Mat, TimeGrid, Vector};
use crate::plant::{saturate, ExoSignal};
use crate::simlog::{fmt_f64, LogRow};

#[derive(Debug, Clone, PartialEq)]
pub struct LqtWeights {
    pub q: Mat,
    pub r: Mat,
    pub q_f: Mat,
    r_inv: Mat,
    r_u: Option<f64>,
}

impl LqtWeights {
    pub fn new(q: Mat, r: Mat, q_f: Mat) -> Result<Self> {
        let n = q.nrows();
        check_dims("weight Q_f", (n, n), q_f.shape())?;
        let q = symmetric(&q, 1e-9)?;
        let q_f = symmetric(&q_f, 1e-9)?;
        let r = symmetric(&r, 1e-9)?;
        for (name, m) in [("Q", &q), ("Q_f", &q_f)] {
            if min_eig_sym(m)? < -1e-12 * m.amax().max(1.0) {
                return Err(Error::InvalidArgument(format!("weight {name} is not PSD")));
            }
        }
        if min_eig_sym(&r)? <= 0.0 {
            return Err(Error::InvalidArgument("weight R is not positive definite".into()));
        }
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SolveFailed("R is singular".into()))?;
        let r0 = r[(0, 0)];
        let scalar = (0..r.nrows()).all(|i| {
            (0..r.ncols()).all(|j| {
                let target = if i == j { r0 } else { 0.0 };
                (r[(i, j)] - target).abs() <= 1e-12 * r0.abs()
            })
        });
        Ok(Self {
            q,
            r,
            q_f,
            r_inv,
            r_u: scalar.then_some(r0),
        })
    }

    pub fn n_x(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.r.nrows()
    }

    /// `Some(R_u)` when `R = R_u·I`.
    pub fn r_u(&self) -> Option<f64> {
        self.r_u
    }

    pub fn has_scalar_r(&self) -> bool {
        self.r_u.is_some()
    }

    pub fn r_inv(&self) -> &Mat {
        &self.r_inv
    }

    pub fn stage_cost(&self, x: &Vector, x_d: &Vector, u: &Vector) -> f64 {
        let e = x - x_d;
        e.dot(&(&self.q * &e)) + u.dot(&(&self.r * u))
    }

    pub fn terminal_cost(&self, x: &Vector, x_d: &Vector) -> f64 {
        let e = x - x_d;
        e.dot(&(&self.q_f * &e))
    }
}

/// Quadratic value coefficients on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CostToGo {
    grid: TimeGrid,
    s2: Vec<Mat>,
    s1: Vec<Vector>,
    s0: Vec<f64>,
}

impl CostToGo {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn s2(&self, k: usize) -> &Mat {
        &self.s2[k]
    }

    pub fn s1(&self, k: usize) -> &Vector {
        &self.s1[k]
    }

    pub fn s0(&self, k: usize) -> f64 {
        self.s0[k]
    }

    /// `V(x, t_k) = xᵀS₂x + 2xᵀS₁ + S₀` at node `k`.
    pub fn value(&self, x: &Vector, k: usize) -> f64 {
        x.dot(&(&self.s2[k] * x)) + 2.0 * x.dot(&self.s1[k]) + self.s0[k]
    }

    /// Columns: `t`, upper triangle of S₂ row by row, S₁, S₀.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.s1.first().map_or(0, |s| s.len());
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header = vec!["t".to_string()];
        for i in 0..n {
            for j in i..n {
                header.push(format!("s2_{}{}", i + 1, j + 1));
            }
        }
        header.extend((1..=n).map(|i| format!("s1_{i}")));
        header.push("s0".into());
        w.write_record(&header)?;
        for k in 0..self.grid.len() {
            let mut rec = vec![fmt_f64(self.grid.time(k))];
            for i in 0..n {
                for j in i..n {
                    rec.push(fmt_f64(self.s2[k][(i, j)]));
                }
            }
            rec.extend(self.s1[k].iter().map(|&x| fmt_f64(x)));
            rec.push(fmt_f64(self.s0[k]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Time-varying affine law `u = K₁(t)x + K₀(t)` on a grid, optionally wrapped
/// in a projection onto the ball of radius `u_max`. Between nodes the gains
/// are interpolated linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    grid: TimeGrid,
    k1: Vec<Mat>,
    k0: Vec<Vector>,
    u_max: Option<f64>,
}

impl FeedbackLaw {
    pub fn new(grid: TimeGrid, k1: Vec<Mat>, k0: Vec<Vector>) -> Result<Self> {
        check_len("feedback K1 table", grid.len(), k1.len())?;
        check_len("feedback K0 table", grid.len(), k0.len())?;
        if let Some(first) = k1.first() {
            let shape = first.shape();
            for (a, b) in k1.iter().zip(&k0) {
                check_dims("feedback K1", shape, a.shape())?;
                check_len("feedback K0", shape.0, b.len())?;
            }
        }
        Ok(Self {
            grid,
            k1,
            k0,
            u_max: None,
        })
    }

    /// Constant gains over the whole grid.
    pub fn constant(grid: TimeGrid, k1: Mat, k0: Vector) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![k1; n], vec![k0; n])
    }

    pub fn with_projection(mut self, u_max: f64) -> Self {
        self.u_max = Some(u_max);
        self
    }

    pub fn u_max(&self) -> Option<f64> {
        self.u_max
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn k1(&self, k: usize) -> &Mat {
        &self.k1[k]
    }

    pub fn k0(&self, k: usize) -> &Vector {
        &self.k0[k]
    }

    /// Builds a new law by mapping every node's gains.
    pub fn map_gains<F>(&self, mut f: F) -> Self
    where
        F: FnMut(usize, &Mat, &Vector) -> (Mat, Vector),
    {
        let (k1, k0) = (0..self.grid.len())
            .map(|k| f(k, &self.k1[k], &self.k0[k]))
            .unzip();
        Self {
            grid: self.grid,
            k1,
            k0,
            u_max: self.u_max,
        }
    }

    pub fn gains_at(&self, t: f64) -> (Mat, Vector) {
        let (k, w) = self.grid.locate(t);
        if w == 0.0 || self.grid.len() == 1 {
            return (self.k1[k].clone(), self.k0[k].clone());
        }
        if w == 1.0 {
            return (self.k1[k + 1].clone(), self.k0[k + 1].clone());
        }
        (
            &self.k1[k] * (1.0 - w) + &self.k1[k + 1] * w,
            &self.k0[k] * (1.0 - w) + &self.k0[k + 1] * w,
        )
    }

    /// `K₁(t)x + K₀(t)` without projection.
    pub fn unconstrained_input(&self, x: &Vector, t: f64) -> Vector {
        let (k1, k0) = self.gains_at(t);
        k1 * x + k0
    }

    /// The law's input, projected onto the ball when a radius is set.
    pub fn input(&self, x: &Vector, t: f64) -> Vector {
        let u = self.unconstrained_input(x, t);
        match self.u_max {
            Some(u_max) => saturate(&u, u_max),
            None => u,
        }
    }

    fn same_grid(&self, grid: &TimeGrid) -> Result<()> {
        let g = &self.grid;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        if g.len() != grid.len() || !close(g.t_start(), grid.t_start()) || !close(g.step(), grid.step())
        {
            return Err(Error::GridMismatch(format!(
                "law grid [{}, {}] ({} nodes) vs [{}, {}] ({} nodes)",
                g.t_start(),
                g.t_end(),
                g.len(),
                grid.t_start(),
                grid.t_end(),
                grid.len()
            )));
        }
        Ok(())
    }
}

struct Tracking<'a> {
    a: &'a Mat,
    bl: &'a Mat,
    w: &'a LqtWeights,
    x_d: &'a ExoSignal,
}

enum Gains<'a> {
    Optimal,
    Law(&'a FeedbackLaw),
}

impl Tracking<'_> {
    fn n(&self) -> usize {
        self.a.nrows()
    }

    fn check(&self) -> Result<()> {
        let n = self.n();
        let m = self.bl.ncols();
        check_dims("system A", (n, n), self.a.shape())?;
        check_dims("system BΛ", (n, m), self.bl.shape())?;
        check_dims("weight Q", (n, n), self.w.q.shape())?;
        check_dims("weight R", (m, m), self.w.r.shape())?;
        check_len("tracked signal", n, self.x_d.dim())?;
        Ok(())
    }

    fn unpack(&self, s: &Vector) -> (Mat, Vector, f64) {
        let n = self.n();
        let s2 = Mat::from_column_slice(n, n, &s.as_slice()[..n * n]);
        let s1 = s.rows(n * n, n).into_owned();
        ((&s2 + s2.transpose()) * 0.5, s1, s[n * n + n])
    }

    fn pack(&self, s2: &Mat, s1: &Vector, s0: f64) -> Vector {
        let n = self.n();
        let mut s = Vector::zeros(n * n + n + 1);
        s.as_mut_slice()[..n * n].copy_from_slice(s2.as_slice());
        s.rows_mut(n * n, n).copy_from(s1);
        s[n * n + n] = s0;
        s
    }

    fn optimal_gains(&self, s2: &Mat, s1: &Vector) -> (Mat, Vector) {
        let g = -(self.w.r_inv() * self.bl.transpose());
        (&g * s2, &g * s1)
    }

    fn terminal(&self, t1: f64) -> Vector {
        let xd = self.x_d.value(t1);
        let qf = &self.w.q_f;
        self.pack(qf, &-(qf * &xd), xd.dot(&(qf * &xd)))
    }

    fn deriv(&self, t: f64, s: &Vector, gains: &Gains) -> Vector {
        let (s2, s1, _) = self.unpack(s);
        let (k1, k0) = match gains {
            Gains::Optimal => self.optimal_gains(&s2, &s1),
            Gains::Law(law) => law.gains_at(t),
        };
        let w = self.w;
        let xd = self.x_d.value(t);
        let ac = self.a + self.bl * &k1;
        let rk0 = &w.r * &k0;
        let blk0 = self.bl * &k0;

        let ds2 = -&w.q - &s2 * &ac - ac.transpose() * &s2 - k1.transpose() * &w.r * &k1;
        let ds1 = &w.q * &xd - (&s2 * &blk0 + ac.transpose() * &s1 + k1.transpose() * &rk0);
        let ds0 = -xd.dot(&(&w.q * &xd)) - 2.0 * s1.dot(&blk0) - k0.dot(&rk0);
        self.pack(&ds2, &ds1, ds0)
    }

    fn solve(&self, grid: &TimeGrid, gains: Gains) -> Result<CostToGo> {
        self.check()?;
        let table = integrate_backward(
            |t, s| self.deriv(t, s, &gains),
            grid,
            &self.terminal(grid.t_end()),
        )?;
        let (mut s2, mut s1, mut s0) = (
            Vec::with_capacity(table.len()),
            Vec::with_capacity(table.len()),
            Vec::with_capacity(table.len()),
        );
        for s in &table {
            let (a, b, c) = self.unpack(s);
            s2.push(a);
            s1.push(b);
            s0.push(c);
        }
        Ok(CostToGo {
            grid: *grid,
            s2,
            s1,
            s0,
        })
    }
}

/// Unconstrained optimal tracking law and its cost-to-go on `grid`.
pub fn solve_unconstrained_lqt(
    a: &Mat,
    b_lambda: &Mat,
    w: &LqtWeights,
    x_d: &ExoSignal,
    grid: &TimeGrid,
) -> Result<(CostToGo, FeedbackLaw)> {
    let problem = Tracking {
        a,
        bl: b_lambda,
        w,
        x_d,
    };
    let ctg = problem.solve(grid, Gains::Optimal)?;
    let (k1, k0) = (0..grid.len())
        .map(|k| problem.optimal_gains(&ctg.s2[k], &ctg.s1[k]))
        .unzip();
    let law = FeedbackLaw::new(*grid, k1, k0)?;
    Ok((ctg, law))
}

/// Cost-to-go of a fixed affine law (ignores any projection wrapper).
pub fn evaluate_policy(
    law: &FeedbackLaw,
    a: &Mat,
    b_lambda: &Mat,
    w: &LqtWeights,
    x_d: &ExoSignal,
    grid: &TimeGrid,
) -> Result<CostToGo> {
    law.same_grid(grid)?;
    Tracking {
        a,
        bl: b_lambda,
        w,
        x_d,
    }
    .solve(grid, Gains::Law(law))
}

/// `argmin_{‖u‖ ≤ u_max} (u − u_uc)ᵀR(u − u_uc)` for `R = R_u·I`, which is the
/// radial projection of `u_uc`.
pub fn project_input(u_uc: &Vector, w: &LqtWeights, u_max: f64) -> Result<Vector> {
    if !w.has_scalar_r() {
        return Err(Error::UnsupportedWeight);
    }
    Ok(saturate(u_uc, u_max))
}

/// Trapezoidal stage cost over the rows plus the terminal cost at the last
/// row. Uses the applied (saturated) input column.
pub fn quadrature_cost(rows: &[LogRow], w: &LqtWeights, x_d: &ExoSignal) -> f64 {
    let Some(last) = rows.last() else {
        return 0.0;
    };
    let stage: Vec<f64> = rows
        .iter()
        .map(|r| w.stage_cost(&r.x_p, &x_d.value(r.t), &r.u_sat))
        .collect();
    let integral: f64 = rows
        .windows(2)
        .zip(stage.windows(2))
        .map(|(r, l)| 0.5 * (r[1].t - r[0].t) * (l[0] + l[1]))
        .sum();
    integral + w.terminal_cost(&last.x_p, &x_d.value(last.t))
}

/// Probe states used to compare cost-to-go functions: the origin and `±e_i`.
pub fn probe_states(n: usize) -> Vec<Vector> {
    let mut probes = vec![Vector::zeros(n)];
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut e = Vector::zeros(n);
            e[i] = sign;
            probes.push(e);
        }
    }
    probes
}

/// `max_x |V^{π₁}(x, t₀) − V^{π₂}(x, t₀)|` over the probe states.
pub fn policy_gap(
    law1: &FeedbackLaw,
    law2: &FeedbackLaw,
    a: &Mat,
    b_lambda: &Mat,
    w: &LqtWeights,
    x_d: &ExoSignal,
    grid: &TimeGrid,
) -> Result<f64> {
    let v1 = evaluate_policy(law1, a, b_lambda, w, x_d, grid)?;
    let v2 = evaluate_policy(law2, a, b_lambda, w, x_d, grid)?;
    Ok(probe_states(a.nrows())
        .iter()
        .map(|x| (v1.value(x, 0) - v2.value(x, 0)).abs())
        .fold(0.0, f64::max))
}
