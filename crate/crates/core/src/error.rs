use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid sample grid: {0}")]
    InvalidGrid(String),

    #[error("degenerate wavelet: discrete energy {energy:e} is numerically zero")]
    DegenerateWavelet { energy: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("Gram matrix is ill-conditioned (kappa = {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("signal is not compactly supported on the grid: endpoint magnitude {endpoint:e} exceeds {limit:e}")]
    SupportViolation { endpoint: f64, limit: f64 },

    #[error("non-finite activation in {stage}")]
    NonFiniteActivation { stage: &'static str },

    #[error("signal {index} has zero energy")]
    DegenerateSignal { index: usize },

    #[error("training diverged: loss was not finite for epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numerics rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateWavelet { .. }
                | Error::IllConditioned { .. }
                | Error::NonFiniteActivation { .. }
                | Error::Divergence { .. }
        )
    }
}
