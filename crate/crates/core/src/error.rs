use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ill-posed problem: {0}")]
    WellPosedness(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("numerical failure in {layer}: {detail}")]
    Numerical { layer: String, detail: String },

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("data format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn numerical(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dimension(_) | Error::Format { .. } | Error::Io { .. } | Error::Statistics(_) => 3,
            Error::WellPosedness(_)
            | Error::Decomposition(_)
            | Error::Numerical { .. }
            | Error::Diverged { .. } => 4,
        }
    }
}
