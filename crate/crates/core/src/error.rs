use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the alignment, loss, evaluation and training layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A value or configuration violates an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Operands have incompatible dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A phase required by the evaluation protocol has no sampled training frames.
    #[error("phase {0} is absent from the sampled training labels")]
    MissingPhase(usize),
    /// A NaN or infinity escaped a loss or gradient computation.
    #[error("non-finite value in {component}: {detail}")]
    Numeric { component: String, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, detail: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            detail: detail.to_string(),
        }
    }
}
