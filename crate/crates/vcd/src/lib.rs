//! Visual contrastive decoding on a synthetic vision-language testbed.
//!
//! The library distorts a visual input with forward Gaussian diffusion,
//! contrasts the next-token distributions obtained from the original and the
//! distorted input, truncates implausible tokens, and samples. A deterministic
//! toy vision-conditioned model with explicit frequency and co-occurrence bias
//! knobs serves as the model under test, and a POPE-style harness measures how
//! much the contrastive rule reduces object hallucination.

pub mod config;
pub mod decoding;
pub mod distortion;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod toymodel;

pub use error::VcdError;
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, VcdError>;
