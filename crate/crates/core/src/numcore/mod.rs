//! Minimal numerical engine: tensors, reverse-mode differentiation, gradient
//! checking, optimizers and dropout.

mod dropout;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub mod rng;

pub use dropout::dropout_mask;
pub use gradcheck::{central_difference, grad_check, GradCheckReport};
pub use optim::{OptimizerMode, OptimizerState};
pub use tape::{value_and_grad, Tape, Var};
pub use tensor::{ParamSet, Tensor};

/// The tape doubles as the record of primitive operations of a forward pass.
pub type ComputationRecord<'p> = Tape<'p>;
