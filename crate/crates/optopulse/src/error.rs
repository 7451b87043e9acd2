//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Covariance matrix fell below the vacuum floor (diagonal < 1/2 or
    /// determinant < 1/4, beyond the round-off tolerance).
    #[error("covariance below vacuum floor: {0}")]
    BelowVacuumFloor(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    /// The fitted model does not describe the data (e.g. a single Gaussian
    /// fitted to a bimodal histogram).
    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// Optical beam support is not covered by the supplied mode grid.
    #[error("insufficient grid coverage: {0}")]
    Coverage(String),

    /// Piezo scan amplitude too large for the linear small-signal regime.
    #[error("nonlinear response detected ({0}); reduce the scan amplitude")]
    Nonlinearity(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
