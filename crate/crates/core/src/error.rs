use thiserror::Error;

/// Errors raised by the continual ridge toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid regime: {0}")]
    InvalidRegime(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown scenario preset `{0}` (expected one of: identity, iso-random, iso-increasing, block-random, block-increasing)")]
    UnknownPreset(String),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("fixed point did not converge after {iterations} iterations (gamma={gamma}, lambda={lambda}, residual={residual:e})")]
    NoConvergence {
        gamma: f64,
        lambda: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("non-positive parameter `{name}` = {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("replication {replication}: {message}")]
    Replication { replication: usize, message: String },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositive { name, value })
    }
}
