use thiserror::Error;

/// Errors raised by the simulator and the verification harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at index {index}: {value}")]
    NonFinite { index: usize, value: f64 },

    #[error("coefficients are not Hermitian: residue {residue:e} exceeds {tolerance:e}")]
    NotHermitian { residue: f64, tolerance: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance model violates its admissibility rules: {0}")]
    Assumption(String),

    #[error("integrability violated: {0}")]
    Divergent(String),

    #[error("resolution failure: {0}")]
    Resolution(String),

    #[error("replica {replica} blew up at t = {t}: max |u| = {max_abs:e}")]
    BlowUp { replica: u64, t: f64, max_abs: f64 },

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("missing data: {0}")]
    Missing(String),

    #[error("regime mismatch: {0}")]
    Regime(String),

    #[error("insufficient samples: {0}")]
    Insufficient(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
