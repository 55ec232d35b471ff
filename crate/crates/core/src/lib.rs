//! Decompositional disentangled predictive auto-encoder for video prediction.

pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
