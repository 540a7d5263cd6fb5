use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Feature widths or column sets disagree with the feature schema.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("{path}:{line}: {message}")]
    Ingestion {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("calibration did not converge after {iterations} iterations (max residual {max_residual:.6})")]
    Calibration {
        iterations: usize,
        max_residual: f64,
        residuals: Vec<f64>,
    },

    #[error("training error: {0}")]
    Training(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn dimension(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
