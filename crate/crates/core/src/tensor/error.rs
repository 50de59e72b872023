use thiserror::Error;

/// Errors from tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("backward requires a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },

    #[error("cross-entropy target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error(
        "conv2d: kernel {kernel:?} with stride {stride} pad {pad} does not fit input {input:?}"
    )]
    ConvGeometry {
        input: Vec<usize>,
        kernel: Vec<usize>,
        stride: usize,
        pad: usize,
    },
}
