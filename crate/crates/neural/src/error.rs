use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] instenc_tensor::Error),

    #[error(transparent)]
    Core(#[from] instenc_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input shape {got:?} does not match the encoder's {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },

    #[error("encoder has no normalization statistics; calibrate it on an owner batch first")]
    NotCalibrated,

    #[error("token sequence is empty")]
    EmptySequence,

    #[error("token {token} is outside a vocabulary of {vocab}")]
    UnknownToken { token: u32, vocab: usize },

    #[error("{what} needs at least {needed} samples, got {got}")]
    TooFewSamples { what: &'static str, needed: usize, got: usize },

    #[error("labels contain a single class")]
    SingleClass,

    #[error("{stage} diverged at epoch {epoch}: loss {loss}")]
    Divergence { stage: &'static str, epoch: usize, loss: f64 },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
