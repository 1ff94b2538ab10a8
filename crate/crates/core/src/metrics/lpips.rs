use std::path::Path;

use ultrabm_tensor::{Real, Tensor};

use crate::container::TensorFile;
use crate::error::{shape, Error, Result};
use crate::losses::{default_extractor, NaturalStats};
use crate::nn::{Downsample, FrozenPyramid};

/// Learned-perceptual-style distance: per stage, channel vectors are scaled
/// to unit length, squared differences are weighted per channel, summed over
/// channels and averaged over space; stages are summed.
///
/// Without a calibrated weight file every channel weight is 1 and the
/// backbone is the built-in fixed-seed extractor, so values are only
/// comparable within one build.
#[derive(Clone, Debug)]
pub struct Lpips {
    backbone: FrozenPyramid<f64>,
    lin: Option<Vec<Vec<f64>>>,
}

impl Default for Lpips {
    fn default() -> Self {
        Self::uncalibrated()
    }
}

impl Lpips {
    pub fn uncalibrated() -> Self {
        Self { backbone: default_extractor(), lin: None }
    }

    /// Backbone weights as `stage{j}.{i}.weight/bias` (max-pool between
    /// stages, ReLU, ImageNet input normalization) and optional per-stage
    /// channel weights `lin{j}` of shape `[C_j]`.
    pub fn from_files(backbone: &Path, lin: Option<&Path>) -> Result<Self> {
        let stats = NaturalStats::IMAGENET;
        let net = FrozenPyramid::from_file(&TensorFile::load(backbone)?, Downsample::MaxPool, true)?
            .with_input_normalization(stats.mu, stats.sigma);
        let lin = match lin {
            None => None,
            Some(p) => {
                let f = TensorFile::load(p)?;
                let widths = net.widths();
                let mut out = Vec::new();
                for (j, &c) in widths.iter().enumerate() {
                    let t: Tensor<f64> = f.get(&format!("lin{}", j + 1))?;
                    if t.numel() != c {
                        return Err(Error::Format(format!("lin{} has {} entries, stage has {c} channels", j + 1, t.numel())));
                    }
                    out.push(t.into_data());
                }
                Some(out)
            }
        };
        Ok(Self { backbone: net, lin })
    }

    pub fn calibrated(&self) -> bool {
        self.lin.is_some()
    }

    pub fn distance<T: Real>(&self, y: &Tensor<T>, r: &Tensor<T>) -> Result<f64> {
        if y.shape() != r.shape() {
            return shape(format!("lpips: {:?} vs {:?}", y.shape(), r.shape()));
        }
        let fy = self.backbone.forward(&y.cast::<f64>())?;
        let fr = self.backbone.forward(&r.cast::<f64>())?;
        let b = y.shape()[0];
        let mut total = 0.0;
        for (j, (a, q)) in fy.iter().zip(&fr).enumerate() {
            let (_, c, h, w) = a.dims4()?;
            let p = h * w;
            let mut stage = 0.0;
            for n in 0..b {
                for px in 0..p {
                    let at = |t: &Tensor<f64>, ch: usize| t.data()[n * c * p + ch * p + px];
                    let na = (0..c).map(|ch| at(a, ch).powi(2)).sum::<f64>().sqrt() + 1e-10;
                    let nq = (0..c).map(|ch| at(q, ch).powi(2)).sum::<f64>().sqrt() + 1e-10;
                    for ch in 0..c {
                        let wt = self.lin.as_ref().map_or(1.0, |l| l[j][ch]);
                        stage += wt * (at(a, ch) / na - at(q, ch) / nq).powi(2);
                    }
                }
            }
            total += stage / p as f64;
        }
        Ok(total / b as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([1, 3, 32, 32], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn identity_and_symmetry() {
        let l = Lpips::uncalibrated();
        let (a, b) = (img(1), img(2));
        assert_eq!(l.distance(&a, &a).unwrap(), 0.0);
        let (d1, d2) = (l.distance(&a, &b).unwrap(), l.distance(&b, &a).unwrap());
        assert!(d1 > 0.0 && (d1 - d2).abs() < 1e-12);
        assert!(!l.calibrated());
    }

    #[test]
    fn matches_per_stage_recomputation() {
        let l = Lpips::uncalibrated();
        let (a, b) = (img(3), img(4));
        let fa = default_extractor::<f64>().forward(&a.cast()).unwrap();
        let fb = default_extractor::<f64>().forward(&b.cast()).unwrap();
        let mut oracle = 0.0;
        for (x, y) in fa.iter().zip(&fb) {
            let s = x.shape();
            let (c, h, w) = (s[1], s[2], s[3]);
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    let vx: Vec<f64> = (0..c).map(|ch| x.at(&[0, ch, i, j])).collect();
                    let vy: Vec<f64> = (0..c).map(|ch| y.at(&[0, ch, i, j])).collect();
                    let nx = vx.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-10;
                    let ny = vy.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-10;
                    acc += vx.iter().zip(&vy).map(|(p, q)| (p / nx - q / ny).powi(2)).sum::<f64>();
                }
            }
            oracle += acc / (h * w) as f64;
        }
        assert!((l.distance(&a, &b).unwrap() - oracle).abs() < 1e-5);
    }

    #[test]
    fn external_weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bb = dir.path().join("bb.safetensors");
        let net = FrozenPyramid::<f64>::seeded(&[4, 8], 2, Downsample::MaxPool, true, 5);
        net.to_file().save(&bb).unwrap();
        let lin = dir.path().join("lin.safetensors");
        let mut f = TensorFile::new();
        f.insert("lin1", &Tensor::<f64>::full([4], 0.5));
        f.insert("lin2", &Tensor::<f64>::full([8], 0.5));
        f.save(&lin).unwrap();
        let half = Lpips::from_files(&bb, Some(&lin)).unwrap();
        let ones = Lpips::from_files(&bb, None).unwrap();
        assert!(half.calibrated());
        let (a, b) = (img(5), img(6));
        assert!((2.0 * half.distance(&a, &b).unwrap() - ones.distance(&a, &b).unwrap()).abs() < 1e-12);
        let mut bad = TensorFile::new();
        bad.insert("lin1", &Tensor::<f64>::full([3], 1.0));
        bad.save(&lin).unwrap();
        assert!(Lpips::from_files(&bb, Some(&lin)).is_err());
    }
}
