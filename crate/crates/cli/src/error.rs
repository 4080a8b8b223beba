use std::path::Path;

use tmav_core::formats::FormatError;
use tmav_core::{BackendError, TrainingError};

/// Exit codes: 1 I/O or usage, 2 schema, 3 quality not met, 4 backend.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("quality threshold not met: best accuracy {best:.4} < Q = {q}")]
    QualityNotMet { best: f64, q: f64 },
    #[error("backend failure: {0}")]
    Backend(String),
}

impl CliError {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) | CliError::Usage(_) => 1,
            CliError::Schema(_) => 2,
            CliError::QualityNotMet { .. } => 3,
            CliError::Backend(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Io(err.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(err: FormatError) -> Self {
        match err {
            FormatError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Schema(other.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(err: BackendError) -> Self {
        CliError::Backend(err.to_string())
    }
}

impl From<TrainingError> for CliError {
    fn from(err: TrainingError) -> Self {
        match err {
            TrainingError::Train(_) | TrainingError::Predict { .. } => CliError::Backend(err.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}
