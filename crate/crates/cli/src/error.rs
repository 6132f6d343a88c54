use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] glcnet::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{0}")]
    Usage(String),

    #[error("output directory {} is locked by another run (remove {} if stale)", .0.display(), .0.join(crate::lock::LOCK_NAME).display())]
    Locked(PathBuf),

    #[error("plot failed: {0}")]
    Plot(String),
}

impl CliError {
    /// 1 for problems with the user's input, 2 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_user_error() => 2,
            CliError::Plot(_) => 2,
            _ => 1,
        }
    }
}

impl CliError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
