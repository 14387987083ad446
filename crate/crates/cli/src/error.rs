//! CLI error type with the stable exit-code contract:
//! 0 success, 1 input/config error, 2 numerical failure.

use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Numeric(_) => 2,
        }
    }

    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.as_ref().to_path_buf();
        move |source| CliError::Io { path, source }
    }
}

impl From<dpnse_core::Error> for CliError {
    fn from(e: dpnse_core::Error) -> Self {
        match e {
            dpnse_core::Error::Config(m) => CliError::Config(m),
            dpnse_core::Error::Dim(m) | dpnse_core::Error::Usage(m) => {
                CliError::Config(format!("internal contract violation: {m}"))
            }
            dpnse_core::Error::Input(m) | dpnse_core::Error::Format(m) => CliError::Input(m),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
