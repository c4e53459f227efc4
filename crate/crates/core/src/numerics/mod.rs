//! Dense `f64` arrays and reverse-mode differentiation.

pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{sigmoid, Tensor};

/// Activation selector for [`activation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

pub fn activation(tape: &mut Tape, x: Var, kind: Activation) -> Var {
    match kind {
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::Tanh => tape.tanh(x),
    }
}
