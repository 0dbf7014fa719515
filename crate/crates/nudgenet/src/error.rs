use std::path::PathBuf;

use thiserror::Error;

/// Failures of the pipeline, grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: hash mismatch, expected {expected}, found {actual}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("[{module}] {source}")]
    Numerical {
        module: &'static str,
        #[source]
        source: nudgenet_core::Error,
    },
    #[error("regression: {0}")]
    Regression(String),
}

pub type Result<T> = std::result::Result<T, AppError>;

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_)
            | AppError::Io { .. }
            | AppError::Format { .. }
            | AppError::HashMismatch { .. } => 2,
            AppError::Numerical { .. } => 3,
            AppError::Regression(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        AppError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

/// Tags core errors with the pipeline stage they came from.
pub trait InModule<T> {
    fn in_module(self, module: &'static str) -> Result<T>;
}

impl<T> InModule<T> for std::result::Result<T, nudgenet_core::Error> {
    fn in_module(self, module: &'static str) -> Result<T> {
        self.map_err(|source| match source {
            nudgenet_core::Error::InvalidInput(msg) => {
                AppError::Config(format!("[{module}] {msg}"))
            }
            source => AppError::Numerical { module, source },
        })
    }
}
