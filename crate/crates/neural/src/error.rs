use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("variable does not belong to this graph")]
    ForeignVar,
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parameter set does not match the model: {0}")]
    TagMismatch(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}; parameters restored to the last finite state")]
    Diverged { epoch: usize, batch: usize },
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] holorec::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Numerical failures map to a different CLI exit code than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Diverged { .. } => true,
            Error::Core(e) => !e.is_input_error(),
            _ => false,
        }
    }
}
