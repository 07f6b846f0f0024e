use thiserror::Error;

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("convolution kernel does not fit the padded input: input {input}, kernel {kernel}, stride {stride}, pad {pad}")]
    NonIntegralOutput {
        input: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    #[error("conv2d kernel dimensions must be odd, got {0}x{1}")]
    EvenKernel(usize, usize),
    #[error("class index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tape already consumed by a backward pass; reset it first")]
    TapeConsumed,
}
