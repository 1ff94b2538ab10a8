//! Dense NCHW tensors and a tape-based reverse-mode autodiff graph.
//!
//! The engine is deliberately small: it covers the operator set needed by
//! convolutional restoration networks (convolutions, pooling, separable
//! resampling, pixel shuffle, channel attention, normalization) and nothing
//! else. Every kernel is single-threaded and runs in a fixed order, so two
//! evaluations over the same inputs are bit-identical.
//!
//! All numeric code is generic over [`Real`], implemented for `f32` (training)
//! and `f64` (gradient checking).

mod error;
mod gemm;
mod graph;
pub mod ops;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use gemm::{gemm, MatLayout};
pub use graph::{Gradients, Graph, Var};
pub use ops::conv::ConvSpec;
pub use ops::resample::{resample_matrix, Filter};
pub use ops::unary::Unary;
pub use real::Real;
pub use tensor::Tensor;
