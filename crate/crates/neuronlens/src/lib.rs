//! Range-based neuron interpretation and manipulation for a built-in toy
//! transformer classifier.
//!
//! The pipeline: generate a synthetic labeled corpus ([`dataset`]), train a
//! small hooked transformer ([`model`]), record per-concept hidden states
//! ([`store`]), rank salient neurons ([`saliency`]), fit per-(neuron, concept)
//! Gaussian statistics with normality diagnostics ([`stats`]), build
//! correlated-range intervention policies ([`intervention`]), and evaluate
//! concept erasure with tau / fraction / layer sweeps ([`eval`]).

pub mod dataset;
pub mod error;
pub mod eval;
pub mod intervention;
pub mod model;
pub mod saliency;
pub mod stats;
pub mod store;

pub use error::{Error, ErrorClass, Result};
