//! Forward and adjoint kernels. These operate on plain tensors and are used
//! both by [`crate::Graph`] and directly by code that needs no gradients.

pub mod broadcast;
pub mod conv;
pub mod layout;
pub mod matmul;
pub mod norm;
pub mod pool;
pub mod reduce;
pub mod resample;
pub mod unary;
