use thiserror::Error;

use crate::boost::TrainTrace;

/// Errors raised by dataset handling, auditing, and training.
#[derive(Debug, Error)]
pub enum McError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient mass: {what} has mass {mass:e}")]
    InsufficientMass { what: String, mass: f64 },

    /// The estimate is kept in log10 form because grid bases overflow `f64`.
    #[error("basis too large: about 10^{log10_estimate:.1} members, cap is {cap:e}")]
    BasisTooLarge { log10_estimate: f64, cap: f64 },

    #[error("no termination: violations remain after {iterations} updates")]
    NonTermination {
        iterations: usize,
        trace: Box<TrainTrace>,
    },

    #[error("logistic regression did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, McError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(McError::Domain(msg.into()))
}
