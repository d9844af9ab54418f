use thiserror::Error;

use crate::optimize::TracePoint;

/// Errors produced anywhere in the restoration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotAScalar(Vec<usize>),

    #[error("instance normalization over a single spatial element (shape {0:?})")]
    DegenerateNormalization(Vec<usize>),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("decode error: {0}")]
    DecodeError(String),

    #[error("config error: {0}")]
    ConfigError(String),

    #[error("optimization diverged at iteration {iteration} (energy {energy})")]
    DivergenceDetected {
        iteration: usize,
        energy: f64,
        trace: Vec<TracePoint>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn mismatch(left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
