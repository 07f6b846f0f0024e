//! Numeric substrate for the EEG-to-painting pipeline.
//!
//! [`Tensor`] is a dense row-major array. A [`Tape`] records every operation
//! applied to [`Var`] handles so that [`Tape::backward`] can accumulate
//! gradients in reverse tape order. Training runs in `f32`; the same graph
//! code runs in `f64` for [`grad_check`].

mod adam;
mod conv;
mod error;
mod gradcheck;
mod opcheck;
pub mod rng;
mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, grad_check_detail, relative_error, GradCheck};
pub use opcheck::{check_all_ops, OpCheck};
pub use rng::SeededRng;
pub use scalar::Real;
pub use tape::{Activation, BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Output size of a strided convolution, `floor((input + 2·pad − kernel) / stride) + 1`,
/// or `None` when the kernel does not fit the padded input. Trailing rows that
/// a stride step would skip past are not visited.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output size of a transposed convolution.
pub fn conv_transpose_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    ((input - 1) * stride + kernel).checked_sub(2 * pad).filter(|&n| n > 0)
}
