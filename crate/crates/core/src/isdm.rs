//! Illumination and semantic modulation of the reflection decoder.
//!
//! At every decoder level the reflection feature is first modulated by the
//! illumination feature of the same level (IMU), then by a projected
//! semantic feature (SMU). Both units share one structure: channel
//! attention between modulator and feature, a sigmoid-gated value path, a
//! gated depth-wise feed-forward block and a residual connection.

use std::path::Path;

use ultrabm_tensor::{Real, Tensor, Var};

use crate::container::TensorFile;
use crate::error::{shape, Error, Result};
use crate::nn::{Builder, Conv, Ctx, Downsample, FrozenPyramid, Init, LayerNorm};

/// Feed-forward expansion factor.
pub const FFN_EXPANSION: f64 = 2.66;

/// Seed of the built-in semantic encoder.
pub const SEMANTIC_SEED: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Illumination,
    Reflection,
    Semantic,
}

/// Per-level feature maps, finest first, each half the size of the previous.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<T> {
    pub levels: Vec<Tensor<T>>,
    pub stream: Stream,
}

impl<T: Real> FeaturePyramid<T> {
    pub fn new(levels: Vec<Tensor<T>>, stream: Stream) -> Result<Self> {
        for pair in levels.windows(2) {
            let (a, b) = (pair[0].dims4()?, pair[1].dims4()?);
            if a.0 != b.0 || a.2 != 2 * b.2 || a.3 != 2 * b.3 {
                return shape(format!("pyramid levels {:?} -> {:?} do not halve", pair[0].shape(), pair[1].shape()));
            }
        }
        Ok(Self { levels, stream })
    }

    /// Writes levels as `s1`..`sN`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = TensorFile::new();
        for (k, t) in self.levels.iter().enumerate() {
            f.insert(format!("s{}", k + 1), t);
        }
        f.metadata.insert("stream".into(), format!("{:?}", self.stream).to_lowercase());
        f.save(path)
    }

    /// Loads a semantic feature file and checks it against the expected
    /// `(channels, height, width)` of every level.
    pub fn load_semantic(path: &Path, expected: &[(usize, usize, usize)]) -> Result<Self> {
        let f = TensorFile::load(path)?;
        let mut levels = Vec::new();
        for (k, &(c, h, w)) in expected.iter().enumerate() {
            let key = format!("s{}", k + 1);
            let t: Tensor<T> = f.get(&key).map_err(|_| Error::Validation(format!("{}: missing `{key}`", path.display())))?;
            let s = t.shape();
            if s.len() != 4 || s[1] != c || s[2] != h || s[3] != w {
                return Err(Error::Validation(format!(
                    "{}: `{key}` has shape {s:?}, expected (B, {c}, {h}, {w})",
                    path.display()
                )));
            }
            levels.push(t);
        }
        Self::new(levels, Stream::Semantic).map_err(|e| Error::Validation(e.to_string()))
    }
}

/// The built-in frozen semantic encoder: one 3×3 convolution per stage,
/// stride 2 from the second stage, leaky activations.
pub fn builtin_semantic_encoder<T: Real>(widths: &[usize]) -> FrozenPyramid<T> {
    FrozenPyramid::seeded(widths, 1, Downsample::Strided, false, SEMANTIC_SEED)
}

pub fn semantic_features<T: Real>(x: &Tensor<T>, encoder: &FrozenPyramid<T>) -> Result<FeaturePyramid<T>> {
    FeaturePyramid::new(encoder.forward(x)?, Stream::Semantic)
}

/// `softmax_rows(q kᵀ / sqrt(HW))` with `q`, `k` the layer-normed,
/// depth-wise convolved inputs flattened to `(B, C, HW)`.
#[derive(Clone, Copy, Debug)]
pub struct ChannelAttention {
    pub ln_q: LayerNorm,
    pub dw_q: Conv,
    pub ln_k: LayerNorm,
    pub dw_k: Conv,
}

impl ChannelAttention {
    pub fn build<T: Real>(b: &mut Builder<T>, name: &str, c: usize) -> Self {
        Self {
            ln_q: b.layer_norm(&format!("{name}.ln_q"), c),
            dw_q: b.depthwise(&format!("{name}.dw_q"), c),
            ln_k: b.layer_norm(&format!("{name}.ln_k"), c),
            dw_k: b.depthwise(&format!("{name}.dw_k"), c),
        }
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, a: Var, r: Var) -> Result<Var> {
        if cx.g.shape(a) != cx.g.shape(r) {
            return shape(format!("attention inputs {:?} vs {:?}", cx.g.shape(a), cx.g.shape(r)));
        }
        let (b, c, h, w) = cx.g.value(a).dims4()?;
        let q = self.ln_q.forward(cx, a)?;
        let q = self.dw_q.forward(cx, q)?;
        let k = self.ln_k.forward(cx, r)?;
        let k = self.dw_k.forward(cx, k)?;
        let q = cx.g.reshape(q, &[b, c, h * w])?;
        let k = cx.g.reshape(k, &[b, c, h * w])?;
        let logits = cx.g.bmm(q, false, k, true)?;
        let logits = cx.g.mul_scalar(logits, 1.0 / ((h * w) as f64).sqrt());
        Ok(cx.g.softmax(logits, 2)?)
    }
}

/// Gated depth-wise feed-forward: `proj_out(gelu(x1) * x2)` where
/// `(x1, x2)` split `dw(proj_in(x))` along channels.
#[derive(Clone, Copy, Debug)]
pub struct Ffn {
    pub proj_in: Conv,
    pub dw: Conv,
    pub proj_out: Conv,
    pub hidden: usize,
}

impl Ffn {
    pub fn build<T: Real>(b: &mut Builder<T>, name: &str, c: usize) -> Self {
        let hidden = (c as f64 * FFN_EXPANSION).floor() as usize;
        Self {
            proj_in: b.conv(&format!("{name}.proj_in"), c, 2 * hidden, 1),
            dw: b.depthwise(&format!("{name}.dw"), 2 * hidden),
            proj_out: b.conv_with(&format!("{name}.proj_out"), hidden, c, 1, Default::default(), Init::Zero),
            hidden,
        }
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let t = self.proj_in.forward(cx, x)?;
        let t = self.dw.forward(cx, t)?;
        let x1 = cx.g.narrow(t, 1, 0, self.hidden)?;
        let x2 = cx.g.narrow(t, 1, self.hidden, self.hidden)?;
        let x1 = cx.g.gelu(x1);
        let gated = cx.g.mul(x1, x2)?;
        self.proj_out.forward(cx, gated)
    }
}

/// One IMU or SMU: `r + ffn(sigmoid(A · value(r)))`.
#[derive(Clone, Copy, Debug)]
pub struct ModulationUnit {
    pub attn: ChannelAttention,
    pub value: Conv,
    pub ffn: Ffn,
}

impl ModulationUnit {
    pub fn build<T: Real>(b: &mut Builder<T>, name: &str, c: usize) -> Self {
        Self {
            attn: ChannelAttention::build(b, &format!("{name}.attn"), c),
            value: b.conv(&format!("{name}.value"), c, c, 1),
            ffn: Ffn::build(b, &format!("{name}.ffn"), c),
        }
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, modulator: Var, r: Var) -> Result<Var> {
        let a = self.attn.forward(cx, modulator, r)?;
        let (b, c, h, w) = cx.g.value(r).dims4()?;
        let v = self.value.forward(cx, r)?;
        let v = cx.g.reshape(v, &[b, c, h * w])?;
        let m = cx.g.bmm(a, false, v, false)?;
        let m = cx.g.reshape(m, &[b, c, h, w])?;
        let m = cx.g.sigmoid(m);
        let m = self.ffn.forward(cx, m)?;
        Ok(cx.g.add(r, m)?)
    }
}

/// Modulation applied at one decoder level.
#[derive(Clone, Debug)]
pub struct IsdmLevel {
    pub imu: Option<ModulationUnit>,
    pub smu: Option<ModulationUnit>,
    /// 1×1 projection of the semantic feature to the level's width.
    pub sem_proj: Option<Conv>,
}

impl IsdmLevel {
    pub fn build<T: Real>(b: &mut Builder<T>, level: usize, c: usize, sem_c: usize, imu: bool, smu: bool) -> Self {
        let name = format!("isdm{level}");
        Self {
            imu: imu.then(|| ModulationUnit::build(b, &format!("{name}.imu"), c)),
            smu: smu.then(|| ModulationUnit::build(b, &format!("{name}.smu"), c)),
            sem_proj: smu.then(|| b.conv(&format!("{name}.sem_proj"), sem_c, c, 1)),
        }
    }

    /// `r → IMU(i_f, r) → SMU(proj(s_f), ·)`, skipping absent units.
    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, i_f: Var, s_f: Option<Var>, r: Var) -> Result<Var> {
        let mut out = r;
        if let Some(imu) = &self.imu {
            out = imu.forward(cx, i_f, out)?;
        }
        if let (Some(smu), Some(proj)) = (&self.smu, &self.sem_proj) {
            let s = s_f.ok_or_else(|| Error::Config("semantic modulation enabled but no semantic features given".into()))?;
            let s = proj.forward(cx, s)?;
            out = smu.forward(cx, s, out)?;
        }
        Ok(out)
    }
}
