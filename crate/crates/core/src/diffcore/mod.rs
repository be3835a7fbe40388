//! Minimal reverse-mode differentiation: parameters, a recording tape,
//! MLP building blocks, finite-difference checking and checkpoints.

pub mod checkpoint;
mod gradcheck;
mod mlp;
mod params;
mod tape;

pub use gradcheck::grad_check;
pub use mlp::{forward_mlp, Activation, Linear, Mlp};
pub use params::{ParamId, ParamStore};
pub use tape::{CustomOp, Gradients, Tape, Var};

use ndarray::Array2;

/// Seed for backpropagating a scalar (`1×1`) node.
pub fn unit_seed() -> Array2<f64> {
    Array2::from_elem((1, 1), 1.0)
}
