use ultrabm_tensor::{Real, Tensor, Var};

use super::config::{ModelConfig, SEMANTIC_WIDTHS};
use crate::error::{shape, Error, Result};
use crate::isdm::{builtin_semantic_encoder, FeaturePyramid, IsdmLevel};
use crate::nn::{Builder, Ctx, FrozenPyramid, ParamStore, UNet};
use crate::retinex::{neighborhood_diff, retinex_divide_var, IlluminationNet};
use crate::rsmu::{BilinearUp, Rsmu, Upsampler};

/// Network structure; parameter values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Architecture {
    pub config: ModelConfig,
    pub illum: IlluminationNet,
    pub refl: UNet,
    /// One entry per decoder level, finest first; empty without ISDM.
    pub isdm: Vec<IsdmLevel>,
    pub up: Upsampler,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
    semantic: FrozenPyramid<T>,
}

/// Where the semantic modulation features come from.
#[derive(Clone, Copy, Debug)]
pub enum Semantic<'a, T> {
    /// The built-in encoder applied to the network input.
    FromInput,
    /// The built-in encoder applied to another image.
    Image(&'a Tensor<T>),
    Features(&'a FeaturePyramid<T>),
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub u_nl: Var,
    pub v_nl: Var,
    pub y: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub u_nl: Tensor<T>,
    pub v_nl: Tensor<T>,
    pub y: Tensor<T>,
}

pub fn build_model<T: Real>(config: &ModelConfig) -> Result<Model<T>> {
    config.validate()?;
    let widths = config.widths();
    let mut params = ParamStore::new();
    let mut b = Builder::new(&mut params, config.seed);
    let illum = IlluminationNet::build(&mut b, &widths);
    let refl = UNet::build(&mut b, "refl", 3, &widths);
    let a = &config.ablations;
    let isdm = if a.isdm {
        (0..config.levels).map(|k| IsdmLevel::build(&mut b, k + 1, widths[k], SEMANTIC_WIDTHS[k], a.imu, a.smu)).collect()
    } else {
        Vec::new()
    };
    let up = if a.rsmu {
        Upsampler::Rsmu(Rsmu::build(&mut b, widths[0], config.scale, a.fsi)?)
    } else {
        Upsampler::Bilinear(BilinearUp::build(&mut b, widths[0], config.scale)?)
    };
    let arch = Architecture { config: config.clone(), illum, refl, isdm, up };
    Ok(Model { arch, params, semantic: builtin_semantic_encoder(&SEMANTIC_WIDTHS) })
}

impl<T: Real> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn uses_semantics(&self) -> bool {
        self.arch.isdm.iter().any(|l| l.smu.is_some())
    }

    pub fn semantic_encoder(&self) -> &FrozenPyramid<T> {
        &self.semantic
    }

    /// The same model with parameters converted to `U`.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { arch: self.arch.clone(), params: self.params.cast(), semantic: self.semantic.cast() }
    }

    /// Semantic pyramid for input `x`, or `None` when no level uses it.
    pub fn semantic_pyramid(&self, x: &Tensor<T>, src: Semantic<'_, T>) -> Result<Option<FeaturePyramid<T>>> {
        if !self.uses_semantics() {
            return Ok(None);
        }
        let pyr = match src {
            Semantic::FromInput => FeaturePyramid::new(self.semantic.forward(x)?, crate::isdm::Stream::Semantic)?,
            Semantic::Image(img) => FeaturePyramid::new(self.semantic.forward(img)?, crate::isdm::Stream::Semantic)?,
            Semantic::Features(f) => f.clone(),
        };
        let (b, _, h, w) = x.dims4()?;
        for (k, t) in pyr.levels.iter().enumerate() {
            let s = t.dims4()?;
            if s.0 != b || s.2 != h >> k || s.3 != w >> k {
                return Err(Error::Validation(format!("semantic level {} has shape {:?}, expected spatial {}x{}", k + 1, t.shape(), h >> k, w >> k)));
            }
        }
        if pyr.levels.len() != self.arch.config.levels {
            return Err(Error::Validation(format!("semantic pyramid has {} levels, expected {}", pyr.levels.len(), self.arch.config.levels)));
        }
        Ok(Some(pyr))
    }

    /// Builds the whole network on `cx.g` for the constant input `x`.
    pub fn forward_graph(&self, cx: &mut Ctx<T>, x: &Tensor<T>, src: Semantic<'_, T>) -> Result<ForwardVars> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h % 16 != 0 || w % 16 != 0 {
            return shape(format!("model input must be (B, 3, H, W) with H, W multiples of 16, got {:?}", x.shape()));
        }
        let sem = self.semantic_pyramid(x, src)?;
        let xv = cx.g.constant(x.clone());
        let u_ig = cx.g.constant(neighborhood_diff(x)?);
        let (u_nl, i_feats) = self.arch.illum.forward(cx, u_ig)?;
        let v_nl = retinex_divide_var(&mut cx.g, xv, u_nl)?;
        let s_vars: Option<Vec<Var>> = sem.map(|p| p.levels.into_iter().map(|t| cx.g.constant(t)).collect());
        let isdm = &self.arch.isdm;
        let feats = self.arch.refl.forward(cx, v_nl, |cx, level, r| match isdm.get(level - 1) {
            Some(unit) => unit.forward(cx, i_feats[level - 1], s_vars.as_ref().map(|s| s[level - 1]), r),
            None => Ok(r),
        })?;
        let y = self.arch.up.forward(cx, feats[0], Some(v_nl))?;
        Ok(ForwardVars { u_nl, v_nl, y })
    }

    pub fn forward_with(&self, x: &Tensor<T>, src: Semantic<'_, T>) -> Result<ForwardOutput<T>> {
        let mut cx = Ctx::new(&self.params, false);
        let v = self.forward_graph(&mut cx, x, src)?;
        Ok(ForwardOutput { u_nl: cx.g.value(v.u_nl).clone(), v_nl: cx.g.value(v.v_nl).clone(), y: cx.g.value(v.y).clone() })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<ForwardOutput<T>> {
        self.forward_with(x, Semantic::FromInput)
    }
}
