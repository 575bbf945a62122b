use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Core(#[from] trussmodal_core::Error),
    #[error("invalid model or training configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}: loss {loss:e} exceeds {factor} x the first-epoch loss {first:e}")]
    Diverged { epoch: usize, loss: f64, first: f64, factor: f64 },
    #[error("dataset has no {0} graphs")]
    EmptySplit(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
