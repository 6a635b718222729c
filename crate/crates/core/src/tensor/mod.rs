//! Dense matrices, a reverse-mode tape and the Adam optimiser.

mod adam;
mod matrix;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use matrix::{dot, squared_distance, DenseMatrix};
pub use tape::{Gradients, KernelGrad, Reduction, Tape, Var, LOG_CLAMP};
