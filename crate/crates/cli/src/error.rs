use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact {path}: run the `{stage}` stage first")]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("acceptance check failed: {0}")]
    Acceptance(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] trussmodal_core::Error),
    #[error(transparent)]
    Nn(#[from] trussmodal_nn::NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 3 for stage
    /// failures, 4 for failed acceptance checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Acceptance(_) => 4,
            _ => 3,
        }
    }

    pub fn stage(stage: &'static str, message: impl ToString) -> Self {
        CliError::Stage { stage, message: message.to_string() }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
