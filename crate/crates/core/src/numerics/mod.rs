//! Dense tensors, a recording tape with reverse-mode gradients, and a
//! finite-difference checker for it.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, Differentiable, GradCheckOptions, GradCheckReport, InputReport};
pub use kernels::ConvGeom;
pub use tape::{CustomBackward, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};

pub(crate) use tape::squash_factor;

/// Output extent of a valid convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize) -> usize {
    (input - kernel) / stride + 1
}
