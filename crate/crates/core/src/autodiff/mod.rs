//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod tape;
mod tensor;

pub use tape::{sigmoid, Gradients, NodeId, Tape, Var};
pub use tensor::{ConvGeom, Padding, Tensor};

#[cfg(test)]
mod tests;
