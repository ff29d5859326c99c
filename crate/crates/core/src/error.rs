use thiserror::Error;

use crate::harness::config::ConfigError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value produced while integrating at t = {t}")]
    NumericalBlowup { t: f64 },

    #[error("matrix is not Hurwitz (max eigenvalue real part {max_real_part})")]
    NotHurwitz { max_real_part: f64 },

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matching conditions have no solution (residual {residual:e})")]
    NoMatchingSolution { residual: f64 },

    #[error("estimated input gain lambda[{index}] = {value} is not positive")]
    NonPositiveLambdaEstimate { index: usize, value: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("input weight R is not a positive multiple of the identity")]
    UnsupportedWeight,

    #[error("logs are not on the same time grid: {0}")]
    GridMismatch(String),

    #[error("log is empty or has a single row")]
    EmptyOrDegenerateLog,

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("malformed log: {0}")]
    MalformedLog(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by the user's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalBlowup { .. }
                | Error::NotHurwitz { .. }
                | Error::SolveFailed(_)
                | Error::NotSymmetric { .. }
                | Error::NoMatchingSolution { .. }
                | Error::NonPositiveLambdaEstimate { .. }
                | Error::GridMismatch(_)
        )
    }
}

pub(crate) fn check_dims(
    context: &'static str,
    expected: (usize, usize),
    got: (usize, usize),
) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected: format!("{}x{}", expected.0, expected.1),
            got: format!("{}x{}", got.0, got.1),
        });
    }
    Ok(())
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        });
    }
    Ok(())
}
