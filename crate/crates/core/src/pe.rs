//! Persistent-excitation monitor: sliding-window Gram integrals of the
//! regressor and their smallest eigenvalue.

use std::io::Write;

use crate::error::{Error, Result};
use crate::numeric::{min_eig_sym, Mat, Vector};
use crate::simlog::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct PeWindow {
    pub start: f64,
    pub min_eig: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeReport {
    pub window: f64,
    pub alpha: f64,
    pub windows: Vec<PeWindow>,
}

impl PeReport {
    /// Smallest Gram eigenvalue over all windows.
    pub fn level(&self) -> f64 {
        self.windows
            .iter()
            .map(|w| w.min_eig)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_persistently_exciting(&self) -> bool {
        self.level() >= self.alpha
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["window_start", "min_eig"])?;
        for win in &self.windows {
            w.write_record([fmt_f64(win.start), fmt_f64(win.min_eig)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Checks `∫_t^{t+T} Φ Φᵀ dτ ≥ αI` over windows starting every `T/4`.
///
/// `samples[k]` is `Φ(t0 + k·dt)`.
pub fn pe_check(samples: &[Vector], t0: f64, dt: f64, window: f64, alpha: f64) -> Result<PeReport> {
    pe_check_with_stride(samples, t0, dt, window, alpha, window / 4.0)
}

pub fn pe_check_with_stride(
    samples: &[Vector],
    t0: f64,
    dt: f64,
    window: f64,
    alpha: f64,
    stride: f64,
) -> Result<PeReport> {
    if !(dt > 0.0) || !(window > 0.0) || !(stride > 0.0) {
        return Err(Error::InvalidArgument(
            "sample spacing, window and stride must be positive".into(),
        ));
    }
    let span = (window / dt).round() as usize;
    if span < 10 {
        return Err(Error::InvalidArgument(format!(
            "window of {window} s spans only {span} samples; at least 10 are needed"
        )));
    }
    if samples.len() < span + 1 {
        return Err(Error::InsufficientData(format!(
            "{} samples do not cover one window of {} samples",
            samples.len(),
            span + 1
        )));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::InvalidArgument("regressor samples differ in length".into()));
    }
    let hop = ((stride / dt).round() as usize).max(1);

    let mut windows = Vec::new();
    let mut start = 0;
    while start + span < samples.len() {
        let gram = trapezoid_gram(&samples[start..=start + span], dt);
        windows.push(PeWindow {
            start: t0 + start as f64 * dt,
            min_eig: min_eig_sym(&gram)?,
        });
        start += hop;
    }
    Ok(PeReport {
        window,
        alpha,
        windows,
    })
}

fn trapezoid_gram(samples: &[Vector], dt: f64) -> Mat {
    let dim = samples[0].len();
    let mut gram = Mat::zeros(dim, dim);
    let last = samples.len() - 1;
    for (k, phi) in samples.iter().enumerate() {
        let w = if k == 0 || k == last { 0.5 * dt } else { dt };
        gram.ger(w, phi, phi, 1.0);
    }
    gram
}
