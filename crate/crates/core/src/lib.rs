//! Mixture-of-Experts layers with neuron-level selection inside each
//! activated expert, plus a small transformer for training and analysis.

pub mod analysis;
pub mod error;
pub mod experts;
pub mod model;
pub mod mone;
pub mod numerics;
pub mod routing;

pub use error::{Error, Result};
