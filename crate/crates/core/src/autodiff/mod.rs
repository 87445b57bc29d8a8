//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod matrix;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use matrix::Matrix;
pub use tape::{Tape, Var, WeightedRows};

pub(crate) use tape::{sigmoid, softplus};
