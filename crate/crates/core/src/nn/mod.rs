//! Parameter storage, the per-forward graph context, and the layer
//! building blocks shared by the model stages.

mod frozen;
mod layers;
mod params;
mod unet;

pub use frozen::{Downsample, FrozenPyramid};
pub use layers::{Builder, ContextUnit, Conv, Init, LayerNorm};
pub use params::{Ctx, ParamId, ParamStore};
pub use unet::UNet;

/// Slope shared by every leaky activation in the model.
pub const LEAK: f64 = 0.2;
