//! Low-light image super-resolution.
//!
//! A low-light, low-resolution image is split into illumination and
//! reflection by a Retinex stage, the reflection is refined by a U-Net whose
//! decoder is modulated by illumination and semantic features, and a
//! multi-substrate up-sampler produces the enlarged, brightened result.

pub mod container;
pub mod error;
pub mod imagedata;
pub mod isdm;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod retinex;
pub mod rsmu;

pub use error::{Error, ErrorKind, Result};
pub use ultrabm_tensor as tensor;
