//! Minimal dense tensors and reverse-mode automatic differentiation.
//!
//! Values are row-major `f64`. A [`Tape`] records every operation eagerly;
//! [`Tape::backward`] sweeps it once in reverse. [`grad_check`] compares the
//! result against central finite differences.

mod error;
mod gradcheck;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck, DEFAULT_STEP};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{matmul, Tensor};
