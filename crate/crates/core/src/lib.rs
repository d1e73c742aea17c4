//! Dual-branch (lag + temporal convolution) short-term load forecaster.

pub mod error;
pub mod neural;

pub use error::{Error, Result};
pub mod dataset;
pub mod eval;
pub mod features;
pub mod inference;
pub mod model;
pub mod quant;
pub mod trainer;
