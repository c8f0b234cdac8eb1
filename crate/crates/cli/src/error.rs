use std::path::{Path, PathBuf};

use thiserror::Error;

use lc_core::{CheckpointError, DatasetError, EngineError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(EngineError),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn checkpoint(path: &Path, source: CheckpointError) -> Self {
        Self::Checkpoint {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 numeric failure, 2 usage or IO, 3 validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Numeric(_) => 1,
            Self::Engine(EngineError::Validation(_)) | Self::Config(_) => 3,
            Self::Engine(_) => 1,
            Self::Io { .. } | Self::Usage(_) | Self::Dataset(_) | Self::Checkpoint { .. } => 2,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        Self::Engine(e)
    }
}
