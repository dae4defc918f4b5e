use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Failure of a command, classified by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid configuration in {}: {message}", path.display())]
    ConfigFile { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] derain::Error),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::ConfigFile { .. } => 1,
            CliError::Core(derain::Error::Config(_) | derain::Error::MissingStage(_)) => 1,
            CliError::Core(_) | CliError::Runtime(_) => 2,
        }
    }

    pub(crate) fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {err}", path.display()))
    }
}
