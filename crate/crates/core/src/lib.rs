//! Saturated adaptive tracking with a high-order tuner, followed by
//! receding-horizon linear-quadratic tracking on the learned model.
//!
//! The pieces, bottom up:
//!
//! - [`numeric`]: fixed-step RK4, Lyapunov solves, small dense helpers.
//! - [`plant`]: the true plant, reference model and sinusoidal targets.
//! - [`msac`]: the adaptive controller and its tuner; [`pe`] checks
//!   excitation of its regressor.
//! - [`lqt`]: finite-horizon tracking, policy evaluation, input projection.
//! - [`mpc`]: the receding-horizon loop and the oracle comparison.
//! - [`harness`]: configuration, the two-phase pipeline, sweeps, plots.

pub mod error;
pub mod harness;
pub mod lqt;
pub mod mpc;
pub mod msac;
pub mod numeric;
pub mod pe;
pub mod plant;
pub mod simlog;

pub use error::{Error, Result};
pub use numeric::{Mat, TimeGrid, Vector};
