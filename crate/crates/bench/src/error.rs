use std::path::PathBuf;

use canon_core::BackendError;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(canon_core::Error),
}

impl From<canon_core::Error> for BenchError {
    fn from(e: canon_core::Error) -> Self {
        match e {
            canon_core::Error::Backend(b) => BenchError::Backend(b),
            other => BenchError::Core(other),
        }
    }
}

impl BenchError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Backend(_) => 3,
            BenchError::Dataset(_) => 4,
            BenchError::Io { .. } | BenchError::Core(_) => 1,
        }
    }
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
