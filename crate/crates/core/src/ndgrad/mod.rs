//! Dense tensors with a small reverse-mode autodiff tape.
//!
//! Enough machinery for an MLP and the 7-layer CIFAR CNN: affine, 3×3
//! convolution, 2×2 max-pooling, ReLU, batch norm, and a fused
//! softmax/cross-entropy whose logit gradient is exactly `probs - target`.
//! Every forward op rejects NaN/Inf outputs. [`gradcheck`] compares the
//! tape against central finite differences.

mod graph;
pub mod gradcheck;
mod tensor;

pub use graph::{BatchNormMode, BatchStats, Graph, Var, BN_EPS, LOG_FLOOR};
pub use gradcheck::{
    grad_check, relative_error, Differentiable, GradCheckConfig, GradCheckReport, GraphObjective,
    LayerReport,
};
pub use tensor::{Scalar, Tensor};

pub(crate) use graph::softmax_rows;
