//! Dense tensors, a reverse-mode tape over a small primitive set, AdamW,
//! and a central-difference gradient oracle.
//!
//! Primitives: 3×3 / 1×1 zero same-padded convolution (stride 1 or 2),
//! nearest 2× upsampling, dense layers, group normalization, SiLU,
//! elementwise and spatially broadcast addition, channel concatenation,
//! scalar scaling and mean-squared error.

mod adamw;
mod gradcheck;
pub(crate) mod kernels;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adamw::{AdamWConfig, AdamWState};
pub use gradcheck::{finite_diff_at, finite_diff_grad, relative_error, Coord};
pub use params::ParamStore;
pub use scalar::Scalar;
pub use tape::{Gradients, NodeId, Tape, GROUP_NORM_EPS};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backpropagation needs a one-element terminal, got shape {0:?}")]
    NonScalarTerminal(Vec<usize>),
    #[error("terminal node has not been evaluated on this tape")]
    NotEvaluated,
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
}
