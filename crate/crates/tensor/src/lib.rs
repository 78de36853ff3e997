//! Dense `f64` tensors, a recording tape for reverse-mode gradients, seeded
//! initialization and a raw on-disk tensor format.
//!
//! Kernels in [`ops`] are pure functions. [`Tape`] records the same kernels
//! and replays them backwards; [`ParamStore`] names parameters and rebuilds
//! them bit for bit from a seed. Large matrix products and distance matrices
//! split their rows across the data-parallel map in `instenc_core::exec`.

mod error;
pub mod gradcheck;
pub mod init;
pub mod ops;
pub mod params;
pub mod tape;
mod tensor;

pub use error::{Error, Result};
pub use init::{seeded_init, Init};
pub use params::{Adam, Bound, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Tensor, RAW_MAGIC};
