use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Failure classes, each with a fixed process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("fit did not converge: {0}")]
    NotConverged(String),
    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::NotConverged(_) => 4,
            Self::Output { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
