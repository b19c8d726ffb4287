//! Dense tensors, reverse-mode differentiation, neural building blocks and
//! optimizers. Everything trainable in the crate is built on this module.

pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use nn::{Activation, GruCell, Linear, Mlp};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Gradients, ParameterSet};
pub use tape::{offsets_from_lengths, sigmoid, Tape, Unary, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("softmax over an empty axis")]
    EmptyAxis,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("no gradient for parameter {0}")]
    MissingGrad(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}
