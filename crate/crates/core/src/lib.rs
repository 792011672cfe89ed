//! Chain-of-factors paper-reviewer matching.
//!
//! A shared Transformer encodes papers conditioned on a factor instruction
//! (semantic, topic, citation). Reviewers are ranked for a submission by a
//! staged cascade over their publication profiles, and an evaluation harness
//! computes precision metrics, probe mean ranks and significance tests.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); the aliases below
//! fix the common choices.

pub mod autodiff;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod matching;
pub mod pretraining;
pub mod scalar;
pub mod tensor;
pub mod tokenizer;

pub use error::{CofError, Result};
pub use scalar::Scalar;

/// Double-precision tensor used for training and gradient checks.
pub type Tensor64 = tensor::Tensor<f64>;
/// Single-precision tensor matching the persisted formats.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type EncoderWeights64 = encoder::EncoderWeights<f64>;
pub type Model64 = encoder::Model<f64>;
