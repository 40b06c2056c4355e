//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Trainable inputs are
//! registered with [`Tape::leaf`], fixed inputs with [`Tape::constant`];
//! every op checks its output for NaN/Inf and fails instead of carrying
//! non-finite values forward.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_coords, GradCheckReport};
pub use tape::{Gradients, ReduceKind, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange { axis: usize, shape: Vec<usize> },
    #[error("empty reduction along axis {axis} of shape {shape:?}")]
    EmptyReduction { axis: usize, shape: Vec<usize> },
    #[error("concatenation of zero tensors")]
    EmptyConcat,
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a one-element output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
}
