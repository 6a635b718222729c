//! Fairness-aware message passing on attributed graphs.

pub mod data;
pub mod error;
pub mod graph;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod propagation;
pub mod synth;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
