//! Library half of the `instenc` binary: config schema, input readers, the
//! stage runners and the output writers.

pub mod config;
pub mod ingest;
pub mod pipeline;
pub mod report;

use std::fmt;

/// Failures that originate in the runner rather than in a library crate.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Malformed config, schema violation or an inconsistent flag.
    Config(String),
    /// Missing or malformed input file.
    Input(String),
    /// Writing results failed.
    Output(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Output(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<instenc_core::Error> for CliError {
    fn from(e: instenc_core::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

fn core_code(e: &instenc_core::Error) -> i32 {
    match e {
        instenc_core::Error::BudgetExceeded { .. } => EXIT_BUDGET,
        instenc_core::Error::IdentityViolation(_) => EXIT_FAILURE,
        _ => EXIT_CONFIG,
    }
}

/// Process exit code for an error: 2 for config, schema and input problems,
/// 3 when an exact score would exceed its budget, 4 when training
/// diverged, 1 for anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) | CliError::Input(_) => EXIT_CONFIG,
                CliError::Output(_) => EXIT_FAILURE,
            };
        }
        if let Some(e) = cause.downcast_ref::<instenc_core::Error>() {
            return core_code(e);
        }
        if let Some(e) = cause.downcast_ref::<instenc_neural::Error>() {
            return match e {
                instenc_neural::Error::Core(c) => core_code(c),
                instenc_neural::Error::Divergence { .. } => EXIT_DIVERGENCE,
                instenc_neural::Error::Config(_)
                | instenc_neural::Error::InputShape { .. }
                | instenc_neural::Error::TooFewSamples { .. }
                | instenc_neural::Error::SingleClass
                | instenc_neural::Error::UnknownToken { .. }
                | instenc_neural::Error::EmptySequence => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            };
        }
    }
    EXIT_FAILURE
}
