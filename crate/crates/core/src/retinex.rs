//! Illumination stream: contrast guidance, illumination U-Net and the
//! Retinex division that yields the reflection map.

use ultrabm_tensor::ops::layout::pad_reflect;
use ultrabm_tensor::{Graph, Real, Tensor, Var};

use crate::error::{shape, Result};
use crate::nn::{Builder, Conv, Ctx, ParamStore, UNet};

/// Floor of the illumination map; also sets the reflection ceiling `1/EPS_U`.
pub const EPS_U: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionResult<T> {
    pub u_ig: Tensor<T>,
    pub u_nl: Tensor<T>,
    pub v_nl: Tensor<T>,
}

/// `clamp(x + (x - mean3x3(x)), 0, 1)` with reflect padding.
///
/// The residual is accumulated as a sum of differences so that flat regions
/// give exactly zero.
pub fn neighborhood_diff<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return shape(format!("neighborhood_diff needs at least 2x2 pixels, got {h}x{w}"));
    }
    let p = pad_reflect(x, 1)?;
    let (ph, pw) = (h + 2, w + 2);
    let (pd, xd) = (p.data(), x.data());
    let ninth = T::c(1.0 / 9.0);
    Ok(Tensor::from_fn([b, c, h, w], |i| {
        let plane = i / (h * w);
        let (r, col) = ((i % (h * w)) / w, i % w);
        let base = plane * ph * pw;
        let centre = xd[i];
        let mut acc = T::zero();
        for dy in 0..3 {
            for dx in 0..3 {
                acc += centre - pd[base + (r + dy) * pw + col + dx];
            }
        }
        (centre + acc * ninth).max(T::zero()).min(T::one())
    }))
}

/// `clamp(x / u, 0, 1/EPS_U)`.
pub fn retinex_divide<T: Real>(x: &Tensor<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != u.shape() {
        return shape(format!("retinex_divide: {:?} vs {:?}", x.shape(), u.shape()));
    }
    let hi = T::c(1.0 / EPS_U);
    Ok(x.zip_map(u, |a, b| (a / b).max(T::zero()).min(hi))?)
}

/// Graph form of [`retinex_divide`].
pub fn retinex_divide_var<T: Real>(g: &mut Graph<T>, x: Var, u: Var) -> Result<Var> {
    if g.shape(x) != g.shape(u) {
        return shape(format!("retinex_divide: {:?} vs {:?}", g.shape(x), g.shape(u)));
    }
    let v = g.div(x, u)?;
    Ok(g.clamp(v, 0.0, 1.0 / EPS_U))
}

/// U-Net over the guidance image followed by a 3-channel sigmoid head
/// rescaled to `[EPS_U, 1]`.
#[derive(Clone, Debug)]
pub struct IlluminationNet {
    pub unet: UNet,
    pub head: Conv,
}

impl IlluminationNet {
    pub fn build<T: Real>(b: &mut Builder<T>, widths: &[usize]) -> Self {
        let unet = UNet::build(b, "illum", 3, widths);
        let head = b.head("illum.head", widths[0], 3);
        Self { unet, head }
    }

    /// Returns `u_nl` and the decoder features, finest level first.
    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, u_ig: Var) -> Result<(Var, Vec<Var>)> {
        let feats = self.unet.forward(cx, u_ig, |_, _, f| Ok(f))?;
        let s = self.head.forward(cx, feats[0])?;
        let s = cx.g.sigmoid(s);
        let s = cx.g.mul_scalar(s, 1.0 - EPS_U);
        let u = cx.g.add_scalar(s, EPS_U);
        // rounding of the affine map can step just outside the interval in f32
        Ok((cx.g.clamp(u, EPS_U, 1.0), feats))
    }
}

/// Full first stage on concrete tensors without gradient tracking.
pub fn decompose<T: Real>(net: &IlluminationNet, params: &ParamStore<T>, x: &Tensor<T>) -> Result<DecompositionResult<T>> {
    let u_ig = neighborhood_diff(x)?;
    let mut cx = Ctx::new(params, false);
    let ui = cx.g.constant(u_ig.clone());
    let (u, _) = net.forward(&mut cx, ui)?;
    let u_nl = cx.g.value(u).clone();
    let v_nl = retinex_divide(x, &u_nl)?;
    Ok(DecompositionResult { u_ig, u_nl, v_nl })
}
