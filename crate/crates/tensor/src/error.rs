use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} needs {expected} values, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("patch size {patch} does not divide spatial dims {height}x{width}")]
    NotDivisible {
        patch: usize,
        height: usize,
        width: usize,
    },
    #[error("batch normalization needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("output does not depend on variable {0}")]
    Detached(usize),
    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),
    #[error("invalid initializer: {0}")]
    Init(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("raw tensor format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
