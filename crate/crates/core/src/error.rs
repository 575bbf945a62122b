use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("mesh generation failed after {attempts} attempts: {reason}")]
    Meshing { attempts: usize, reason: String },

    #[error("structure is a mechanism (singular stiffness): {0}")]
    Mechanism(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dataset format error: {0}")]
    Format(String),

    #[error("checksum mismatch for graph {graph_id}")]
    Checksum { graph_id: usize },

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
