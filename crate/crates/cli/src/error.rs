use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Stage { .. } => 3,
            CliError::Io { .. } => 1,
        }
    }

    pub fn stage(stage: &str, err: impl std::fmt::Display) -> Self {
        CliError::Stage { stage: stage.to_string(), message: err.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;
