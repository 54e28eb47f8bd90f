use diffcore::DiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OcrlError {
    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error("scene generation: {0}")]
    Generation(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Data(String),

    #[error("non-finite loss {loss} in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, OcrlError>;
