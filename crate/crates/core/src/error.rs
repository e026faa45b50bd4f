use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible action: {0}")]
    InfeasibleAction(String),

    #[error("offline solver did not converge after {iterations} Newton steps (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("instance too large for exhaustive search: {points:.3e} grid points")]
    InstanceTooLarge { points: f64 },

    #[error("non-finite activation at layer {layer}")]
    NonFinite { layer: usize },

    #[error("training diverged at epoch {epoch}: validation loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("relative value iteration did not converge after {sweeps} sweeps (span {span:.3e})")]
    RviNonConvergence { sweeps: usize, span: f64 },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
