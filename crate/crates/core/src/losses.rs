//! Training objectives: luminance statistics, illumination smoothness,
//! reconstruction and perceptual terms, and their weighted sum.

use serde::{Deserialize, Serialize};
use ultrabm_tensor::{Graph, Real, Tensor, Unary, Var};

use crate::error::{config, shape, Error, Result};
use crate::nn::{Downsample, FrozenPyramid};

/// Natural-image channel statistics used by the luminance term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NaturalStats {
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
}

impl NaturalStats {
    pub const IMAGENET: NaturalStats = NaturalStats { mu: [0.485, 0.456, 0.406], sigma: [0.229, 0.224, 0.225] };
}

impl Default for NaturalStats {
    fn default() -> Self {
        Self::IMAGENET
    }
}

/// Which exponent the luminance term uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LuminanceForm {
    /// `exp(|m - mu - sigma|) - 1`.
    #[default]
    AsPrinted,
    /// `exp(max(0, |m - mu| - sigma)) - 1`: zero anywhere within one sigma.
    Band,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub sl: f64,
    pub is: f64,
    pub r: f64,
    pub p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { sl: 1.0, is: 1.0, r: 1.0, p: 1.2 }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.sl, self.is, self.r, self.p]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            config(format!("loss weights must be finite and non-negative: {self:?}"))
        }
    }
}

/// Per-stage weights of the perceptual term.
pub const PERCEPTUAL_STAGE_WEIGHTS: [f64; 5] = [0.1, 0.1, 1.0, 1.0, 1.0];

/// Seed of the built-in perceptual extractor.
pub const PERCEPTUAL_SEED: u64 = 1;

/// Stage widths of the built-in perceptual extractor.
pub const PERCEPTUAL_WIDTHS: [usize; 5] = [16, 32, 64, 128, 128];

/// Anything producing a list of feature maps from an image, with its own
/// weights held fixed.
pub trait FeatureExtractor<T: Real> {
    fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>>;
}

impl<T: Real> FeatureExtractor<T> for FrozenPyramid<T> {
    fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        self.forward_graph(g, x)
    }
}

/// Built-in perceptual extractor: five ReLU stages separated by max
/// pooling, ImageNet input normalization, fixed seed.
pub fn default_extractor<T: Real>() -> FrozenPyramid<T> {
    FrozenPyramid::seeded(&PERCEPTUAL_WIDTHS, 1, Downsample::MaxPool, true, PERCEPTUAL_SEED)
        .with_input_normalization(NaturalStats::IMAGENET.mu, NaturalStats::IMAGENET.sigma)
}

fn channels3<T: Real>(g: &Graph<T>, v: Var, what: &str) -> Result<()> {
    let s = g.shape(v);
    if s.len() != 4 || s[1] != 3 {
        return shape(format!("{what} needs a (B, 3, H, W) input, got {s:?}"));
    }
    Ok(())
}

/// Mean over channels of `exp(|mean_c(v) - mu_c - sigma_c|) - 1`, channel
/// means taken over batch and space.
pub fn luminance_loss<T: Real>(g: &mut Graph<T>, v: Var, stats: &NaturalStats, form: LuminanceForm) -> Result<Var> {
    channels3(g, v, "luminance_loss")?;
    let m = g.mean_axes(v, &[0, 2, 3])?;
    let e = match form {
        LuminanceForm::AsPrinted => {
            let t = g.constant(Tensor::from_fn([1, 3, 1, 1], |c| T::c(stats.mu[c] + stats.sigma[c])));
            let d = g.sub(m, t)?;
            g.unary(d, Unary::Abs)
        }
        LuminanceForm::Band => {
            let t = g.constant(Tensor::from_fn([1, 3, 1, 1], |c| T::c(stats.mu[c])));
            let s = g.constant(Tensor::from_fn([1, 3, 1, 1], |c| T::c(stats.sigma[c])));
            let d = g.sub(m, t)?;
            let d = g.unary(d, Unary::Abs);
            let d = g.sub(d, s)?;
            g.relu(d)
        }
    };
    let e = g.unary(e, Unary::Exp);
    let e = g.add_scalar(e, -1.0);
    Ok(g.mean(e))
}

/// Element mean of SmoothL1(u - gray), gray broadcast over u's channels.
pub fn illum_smooth_loss<T: Real>(g: &mut Graph<T>, u: Var, gray: Var) -> Result<Var> {
    let (su, sg) = (g.shape(u).to_vec(), g.shape(gray).to_vec());
    if su.len() != 4 || sg.len() != 4 || su[0] != sg[0] || su[2..] != sg[2..] || sg[1] != 1 {
        return shape(format!("illum_smooth_loss: u {su:?} vs gray {sg:?}"));
    }
    let d = g.sub(u, gray)?;
    let d = g.unary(d, Unary::SmoothL1);
    Ok(g.mean(d))
}

/// Mean absolute error.
pub fn recon_loss<T: Real>(g: &mut Graph<T>, y: Var, reference: Var) -> Result<Var> {
    if g.shape(y) != g.shape(reference) {
        return shape(format!("recon_loss: {:?} vs {:?}", g.shape(y), g.shape(reference)));
    }
    let d = g.sub(y, reference)?;
    let d = g.unary(d, Unary::Abs);
    Ok(g.mean(d))
}

/// Perceptual term with the standard five stage weights.
pub fn perceptual_loss<T: Real, E: FeatureExtractor<T> + ?Sized>(g: &mut Graph<T>, y: Var, reference: Var, ext: &E) -> Result<Var> {
    perceptual_loss_weighted(g, y, reference, ext, &PERCEPTUAL_STAGE_WEIGHTS)
}

/// `Σ_j w_j · mean|φ_j(y) - φ_j(ref)|`. The reference features carry no
/// gradient.
pub fn perceptual_loss_weighted<T: Real, E: FeatureExtractor<T> + ?Sized>(
    g: &mut Graph<T>,
    y: Var,
    reference: Var,
    ext: &E,
    weights: &[f64],
) -> Result<Var> {
    if g.shape(y) != g.shape(reference) {
        return shape(format!("perceptual_loss: {:?} vs {:?}", g.shape(y), g.shape(reference)));
    }
    let fy = ext.features(g, y)?;
    let rc = g.constant(g.value(reference).clone());
    let fr = ext.features(g, rc)?;
    if fy.len() != weights.len() {
        return Err(Error::Config(format!("extractor has {} stages, {} weights given", fy.len(), weights.len())));
    }
    let mut total: Option<Var> = None;
    for ((a, b), &w) in fy.into_iter().zip(fr).zip(weights) {
        let b = g.constant(g.value(b).clone());
        let d = g.sub(a, b)?;
        let d = g.unary(d, Unary::Abs);
        let m = g.mean(d);
        let term = g.mul_scalar(m, w);
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    total.ok_or_else(|| Error::Config("extractor produced no stages".into()))
}

/// `Σ λ_i L_i`.
pub fn total_loss<T: Real>(g: &mut Graph<T>, components: [Var; 4], w: &LossWeights) -> Result<Var> {
    let ws = w.as_array();
    let mut t = g.mul_scalar(components[0], ws[0]);
    for k in 1..4 {
        let term = g.mul_scalar(components[k], ws[k]);
        t = g.add(t, term)?;
    }
    Ok(t)
}

pub fn total_loss_value(components: [f64; 4], w: &LossWeights) -> f64 {
    components.iter().zip(w.as_array()).map(|(c, w)| c * w).sum()
}
