use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config values or input files.
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    /// A stage failed on well-formed input.
    #[error("{0}")]
    Pipeline(String),
    #[error("{path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input { .. } => 2,
            CliError::Pipeline(_) | CliError::Output { .. } => 3,
        }
    }

    pub fn input(path: &Path, message: impl ToString) -> Self {
        CliError::Input {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    pub fn pipeline(stage: &str, err: impl std::fmt::Display) -> Self {
        CliError::Pipeline(format!("{stage}: {err}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
