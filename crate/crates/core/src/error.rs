use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad argument to an operation (unknown agent, mismatched dimension, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A scenario that violates one of the standing assumptions.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("weight factor schedule error: lambda increased from {prev} to {next} at iteration {k}")]
    Schedule { k: usize, prev: f64, next: f64 },

    #[error("divergence at iteration {k}: {reason}")]
    Divergence { k: usize, reason: String },

    #[error("audit error: {0}")]
    Audit(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
