use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid universe: {0}")]
    InvalidUniverse(String),

    #[error("sample {index} has no label")]
    MissingLabel { index: usize },

    #[error("duplicate sample identifier `{0}`")]
    DuplicateSample(String),

    #[error("requested {requested} samples from a universe of {available}")]
    SampleCount { requested: usize, available: usize },

    #[error("encoder is not injective: symbol {symbol} appears more than once")]
    NotInjective { symbol: u32 },

    #[error("encoder of length {encoder} does not cover a universe of {universe} samples")]
    EncoderDomain { encoder: usize, universe: usize },

    #[error("invalid family: {0}")]
    InvalidFamily(String),

    #[error("weights must be positive and sum to 1 (sum = {sum})")]
    InvalidWeights { sum: f64 },

    #[error("duplicate encoder table at positions {first} and {second}")]
    DuplicateEncoder { first: usize, second: usize },

    #[error("cannot compose: inner codomain has {inner_codomain} symbols, outer domain has {outer_domain}")]
    CompositionMismatch { inner_codomain: usize, outer_domain: usize },

    #[error("family too large to enumerate: {0}")]
    FamilyTooLarge(String),

    #[error("observation cannot be produced by any encoder of the family")]
    ImpossibleObservation,

    #[error("enumeration needs {cost} evaluations, budget is {budget}")]
    BudgetExceeded { cost: u128, budget: u128 },

    #[error("mismatched distribution assigns zero mass to encoder {encoder} which has posterior mass {mass}")]
    SupportViolation { encoder: usize, mass: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("identity check failed: {0}")]
    IdentityViolation(String),

    #[error("json: {0}")]
    Json(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
