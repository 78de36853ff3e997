//! Exact, brute-force scoring of randomized instance-encoding schemes.
//!
//! A data owner publishes `{(T(x), L(x))}` for her private samples, with the
//! encoder `T` drawn at random from a finite family. Everything in this crate
//! works on universes small enough to enumerate: every encoder in the family,
//! every owner dataset of a given size, every labeling in a prior. Scores are
//! Shannon entropies in bits.
//!
//! Module map:
//!
//! * [`universe`]: samples, labelings, owner/public datasets, observations.
//! * [`families`]: table encoders, weighted encoder families and their algebra.
//! * [`scores`]: posteriors, MAP attacks, privacy/utility scores and the
//!   identities relating them.
//! * [`exec`]: the data-parallel map used by the enumerations, with a
//!   sequential fallback.

pub mod entropy;
mod error;
pub mod exec;
pub mod families;
pub mod rng;
pub mod scores;
pub mod universe;

pub use error::{Error, Result};
pub use families::{EncoderFamily, TableEncoder};
pub use scores::{Posterior, ScoreReport};
pub use universe::{Observation, OwnerDataset, PublicDataset, Universe};
