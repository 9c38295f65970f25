//! Dense `f64` tensors with a define-by-run reverse-mode tape and a
//! central-difference gradient checker.

mod gradcheck;
mod kernels;
pub mod mtf;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, gradcheck_masked, GradcheckReport};
pub use tape::{Gradients, Mode, Tape, Var};
pub use tensor::Tensor;
