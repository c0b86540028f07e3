use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("missing artifact {path} (run `{stage}` first)")]
    MissingArtifact { stage: &'static str, path: PathBuf },
    #[error("numeric divergence: {0}")]
    Divergence(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::MissingArtifact { .. } => 3,
            CliError::Divergence(_) => 4,
            CliError::Io { .. } => 1,
        }
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug, Error)]
#[error("[{stage}] {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: CliError,
}

pub trait InStage<T> {
    fn in_stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T> InStage<T> for Result<T, CliError> {
    fn in_stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}
