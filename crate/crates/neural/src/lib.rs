//! Learned instance encoders and the attacks against them.
//!
//! * [`encoders`]: random patch encoders (one shared weight set applied to
//!   every patch, outputs shuffled per sample), linear encoders and a
//!   recurrent text encoder.
//! * [`kernels`]: Gaussian kernels and the unbiased MMD² estimator.
//! * [`align`]: minimum-cost assignment and aligned errors for shuffled sets.
//! * [`attacks`]: MMD distribution matching, sensitive attribute transfer,
//!   the matching game and plaintext recovery.
//! * [`learning`]: permutation-invariant set classifiers, AUC and the
//!   single-owner / combined training settings.
//! * [`synthetic`]: seeded toy datasets.

pub mod align;
pub mod attacks;
pub mod encoders;
mod error;
pub mod kernels;
pub mod learning;
pub mod synthetic;

pub use encoders::{ImageEncoder, ImageEncoderSpec, LinearEncoderSpec, PatchEncoderSpec};
pub use error::{Error, Result};
pub use kernels::KernelSpec;
