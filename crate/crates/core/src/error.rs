use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("innovation covariance of {filter} is not positive definite")]
    InnovationNotInvertible { filter: String },

    #[error("riccati solver did not converge after {iterations} iterations (residual {residual:e})")]
    DareNotConverged { iterations: usize, residual: f64 },

    #[error("closed loop is not stable: spectral radius {0}")]
    UnstableClosedLoop(f64),

    #[error("sensor index {index} out of range for {count} sensors")]
    InvalidSensor { index: usize, count: usize },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("suspicious levels sum to zero")]
    ZeroWeights,

    #[error("invalid value for `{field}`: {reason}")]
    Config { field: String, reason: String },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
