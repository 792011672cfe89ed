use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CofError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite gradient for parameter {param} ({name})")]
    NonFiniteGradient { param: usize, name: String },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CofError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CofError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's arguments rather than by data.
    pub fn is_usage(&self) -> bool {
        matches!(self, CofError::Usage(_) | CofError::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, CofError>;
