use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("drift matrix is not Hurwitz (trace {trace:.6}, det {det:.6})")]
    Unstable { trace: f64, det: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("unphysical state at step {step}: {reason}")]
    UnphysicalState { step: u64, reason: String },

    #[error("policy failure: {0}")]
    Policy(String),

    #[error("weight file {location}: {msg}")]
    WeightFormat { location: String, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("trajectory {index} failed: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} trajectories failed: {details}")]
    EnsembleFailed { failed: usize, total: usize, details: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
