use std::path::PathBuf;

use thiserror::Error;

use crate::transforms::TransformPoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures reported by an [`EnergyBackend`](crate::energy::EnergyBackend).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request to {url} timed out after {elapsed_ms} ms ({attempts} attempt(s))")]
    Timeout {
        url: String,
        elapsed_ms: u64,
        attempts: u32,
    },
    #[error("backend at {url} is unreachable: {detail}")]
    Unreachable { url: String, detail: String },
    #[error("protocol error from {url}: {detail}")]
    Protocol { url: String, detail: String },
    #[error("server error {status} from {url}: {detail}")]
    Server {
        url: String,
        status: u16,
        detail: String,
    },
    #[error("timestep {timestep} outside schedule range 1..={max}")]
    Range { timestep: usize, max: usize },
    #[error("backend failure: {0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format in {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("logit vector is empty")]
    EmptyLogits,
    #[error("normalized classifier energy requested without a normalizing prompt")]
    MissingNormPrompt,
    #[error("index {index} outside 1..={max}")]
    Index { index: usize, max: usize },
    #[error("both energy weights are zero")]
    BothWeightsZero,
    #[error("kernel matrix not positive definite even with jitter {jitter:e}")]
    SingularKernel { jitter: f64 },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("evaluation failed at candidate {point}: {source}")]
    Evaluation {
        point: TransformPoint,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap an error with the candidate point that produced it.
    pub fn at_point(self, point: &TransformPoint) -> Self {
        Error::Evaluation {
            point: point.clone(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping candidate-context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Evaluation { source, .. } => source.root(),
            other => other,
        }
    }
}
