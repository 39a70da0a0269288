//! Reverse-mode differentiation over the tensor operations used by the flow layers.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, FD_STEP, REL_FLOOR};
pub use tape::{Gradients, Op, Tape, Var};
pub use tensor::Tensor;
