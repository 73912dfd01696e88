use std::io;
use std::path::PathBuf;

use crate::checkpoint::CheckpointError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VERIFY_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] saisa_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("preset file {}: {msg}", path.display())]
    PresetFile { path: PathBuf, msg: String },
    #[error("checkpoint {}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        source: CheckpointError,
    },
    #[error("{0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(_) | Self::PresetFile { .. } | Self::Usage(_) => exit::USAGE,
            // a malformed checkpoint is treated like any other unreadable file
            Self::Io { .. } | Self::Checkpoint { .. } => exit::IO,
            Self::VerifyFailed(_) => exit::VERIFY_FAILED,
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
