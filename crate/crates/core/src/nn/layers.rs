use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ultrabm_tensor::{ConvSpec, Real, Tensor, Var};

use super::{Ctx, ParamId, ParamStore, LEAK};
use crate::error::Result;

/// Gain on the last convolution of a residual branch, keeping stacked
/// units close to the identity at initialization.
pub const RESIDUAL_GAIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with std `gain * sqrt(2 / fan_in)`.
    He(f64),
    Zero,
}

/// Registers parameters in a fixed order from one seeded stream.
pub struct Builder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Real> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Self { store, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], fan_in: usize, init: Init) -> ParamId {
        let t = match init {
            Init::Zero => Tensor::zeros(shape.to_vec()),
            Init::He(gain) => {
                let std = gain * (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("valid std");
                Tensor::from_fn(shape.to_vec(), |_| T::c(normal.sample(&mut self.rng)))
            }
        };
        self.store.add(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape.to_vec(), T::c(value)))
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        self.conv_with(name, cin, cout, k, ConvSpec::same(k), Init::He(1.0))
    }

    pub fn conv_with(&mut self, name: &str, cin: usize, cout: usize, k: usize, spec: ConvSpec, init: Init) -> Conv {
        let per_group = cin / spec.groups;
        let w = self.tensor(&format!("{name}.weight"), &[cout, per_group, k, k], per_group * k * k, init);
        let b = self.store.add(format!("{name}.bias"), Tensor::zeros([cout]));
        Conv { w, b, spec }
    }

    /// Zero-initialized 3×3 output projection: the branch it ends starts
    /// switched off.
    pub fn head(&mut self, name: &str, cin: usize, cout: usize) -> Conv {
        self.conv_with(name, cin, cout, 3, ConvSpec::same(3), Init::Zero)
    }

    pub fn depthwise(&mut self, name: &str, c: usize) -> Conv {
        self.conv_with(name, c, c, 3, ConvSpec { stride: 1, pad: 1, groups: c }, Init::He(1.0))
    }

    pub fn layer_norm(&mut self, name: &str, c: usize) -> LayerNorm {
        LayerNorm { gamma: self.constant(&format!("{name}.gamma"), &[c], 1.0), beta: self.constant(&format!("{name}.beta"), &[c], 0.0) }
    }

    pub fn context_unit(&mut self, name: &str, c: usize) -> ContextUnit {
        ContextUnit {
            a: self.conv(&format!("{name}.conv1"), c, c, 3),
            b: self.conv_with(&format!("{name}.conv2"), c, c, 3, ConvSpec::same(3), Init::He(RESIDUAL_GAIN)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let w = cx.p(self.w);
        let b = cx.p(self.b);
        Ok(cx.g.conv2d(x, w, Some(b), self.spec)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let (g, b) = (cx.p(self.gamma), cx.p(self.beta));
        Ok(cx.g.layer_norm_channels(x, g, b, Self::EPS)?)
    }
}

/// `x + act(conv(act(conv(x))))` with leaky activations.
#[derive(Clone, Copy, Debug)]
pub struct ContextUnit {
    pub a: Conv,
    pub b: Conv,
}

impl ContextUnit {
    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let h = self.a.forward(cx, x)?;
        let h = cx.g.leaky_relu(h, LEAK);
        let h = self.b.forward(cx, h)?;
        let h = cx.g.leaky_relu(h, LEAK);
        Ok(cx.g.add(x, h)?)
    }
}
