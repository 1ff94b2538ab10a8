//! Multi-substrate up-sampler: pixel-shuffle substrates at ×1, ×2 and ×4,
//! cross-scale exchange (FSI) with selective-kernel fusion, staged in ×2
//! steps, and a bicubic global residual from the reflection image.

use ultrabm_tensor::ops::layout;
use ultrabm_tensor::{ConvSpec, Filter, Graph, Real, Tensor, Var};

use crate::error::{config, shape, Result};
use crate::nn::{Builder, Conv, Ctx, Init, LEAK};

/// Clamp margin before taking the logit of the residual image.
pub const SKIP_DELTA: f64 = 1e-3;

/// The three substrate scales.
pub const SCALES: [usize; 3] = [1, 2, 4];

pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    Ok(layout::pixel_shuffle(x, r)?)
}

pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    Ok(layout::pixel_unshuffle(x, r)?)
}

/// Feature maps at ×1, ×2 and ×4 of a base resolution, same width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleBundle<V> {
    pub u1: V,
    pub u2: V,
    pub u4: V,
}

impl<V: Copy> ScaleBundle<V> {
    pub fn get(&self, scale: usize) -> V {
        match scale {
            1 => self.u1,
            2 => self.u2,
            _ => self.u4,
        }
    }
}

fn check_bundle<T: Real>(g: &Graph<T>, b: &ScaleBundle<Var>) -> Result<(usize, usize, usize, usize)> {
    let s1 = g.value(b.u1).dims4()?;
    for (i, v) in [(2, b.u2), (4, b.u4)] {
        let s = g.value(v).dims4()?;
        if s != (s1.0, s1.1, i * s1.2, i * s1.3) {
            return shape(format!("bundle member x{i} has shape {:?}, base is {:?}", g.shape(v), g.shape(b.u1)));
        }
    }
    Ok(s1)
}

/// How a feature at scale `i` is brought to scale `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resampling {
    Identity,
    /// Bilinear up-sampling by the factor.
    Up(usize),
    /// Chain of this many stride-2 convolutions.
    Down(usize),
}

pub fn resampling_rule(i: usize, j: usize) -> Resampling {
    use std::cmp::Ordering::*;
    match j.cmp(&i) {
        Equal => Resampling::Identity,
        Greater => Resampling::Up(j / i),
        Less => Resampling::Down((i / j).trailing_zeros() as usize),
    }
}

/// Selective-kernel fusion of three equally shaped branches.
#[derive(Clone, Debug)]
pub struct Skff {
    pub squeeze: Conv,
    pub excite: [Conv; 3],
}

impl Skff {
    pub fn bottleneck(c: usize) -> usize {
        (c / 8).max(4)
    }

    pub fn build<T: Real>(b: &mut Builder<T>, name: &str, c: usize) -> Self {
        let d = Self::bottleneck(c);
        Self {
            squeeze: b.conv(&format!("{name}.squeeze"), c, d, 1),
            excite: std::array::from_fn(|k| b.conv(&format!("{name}.excite{k}"), d, c, 1)),
        }
    }

    /// Branch weights `(B, 3, C, 1)`, a softmax across branches per channel.
    pub fn weights<T: Real>(&self, cx: &mut Ctx<T>, branches: &[Var]) -> Result<Var> {
        if branches.len() != 3 {
            return shape(format!("skff needs 3 branches, got {}", branches.len()));
        }
        let s0 = cx.g.shape(branches[0]).to_vec();
        if branches.iter().any(|b| cx.g.shape(*b) != s0.as_slice()) {
            return shape("skff branches differ in shape");
        }
        let (b, c) = (s0[0], s0[1]);
        let mut sum = cx.g.add(branches[0], branches[1])?;
        sum = cx.g.add(sum, branches[2])?;
        let pooled = cx.g.mean_axes(sum, &[2, 3])?;
        let z = self.squeeze.forward(cx, pooled)?;
        let z = cx.g.leaky_relu(z, LEAK);
        let mut logits = Vec::with_capacity(3);
        for e in &self.excite {
            logits.push(e.forward(cx, z)?);
        }
        let cat = cx.g.concat(&logits, 1)?;
        let cat = cx.g.reshape(cat, &[b, 3, c, 1])?;
        Ok(cx.g.softmax(cat, 1)?)
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, branches: &[Var]) -> Result<Var> {
        let w = self.weights(cx, branches)?;
        let (b, c) = (cx.g.shape(branches[0])[0], cx.g.shape(branches[0])[1]);
        let mut out = None;
        for (k, &br) in branches.iter().enumerate() {
            let wk = cx.g.narrow(w, 1, k, 1)?;
            let wk = cx.g.reshape(wk, &[b, c, 1, 1])?;
            let term = cx.g.mul(br, wk)?;
            out = Some(match out {
                None => term,
                Some(acc) => cx.g.add(acc, term)?,
            });
        }
        Ok(out.expect("three branches"))
    }
}

/// Feature self-integration: every output scale fuses all three inputs
/// after resampling them to that scale.
#[derive(Clone, Debug)]
pub struct Fsi {
    pub down_2_1: Conv,
    pub down_4_2: Conv,
    pub down_4_1: [Conv; 2],
    pub fuse: [Skff; 3],
}

impl Fsi {
    pub fn build<T: Real>(b: &mut Builder<T>, name: &str, c: usize) -> Self {
        let strided = ConvSpec { stride: 2, pad: 1, groups: 1 };
        let mut down = |n: &str| b.conv_with(&format!("{name}.{n}"), c, c, 3, strided, Init::He(1.0));
        let down_2_1 = down("down_2_1");
        let down_4_2 = down("down_4_2");
        let down_4_1 = [down("down_4_1a"), down("down_4_1b")];
        let fuse = std::array::from_fn(|k| Skff::build(b, &format!("{name}.skff{}", SCALES[k]), c));
        Self { down_2_1, down_4_2, down_4_1, fuse }
    }

    /// Brings the scale-`i` feature `x` to scale `j`.
    pub fn resample<T: Real>(&self, cx: &mut Ctx<T>, x: Var, i: usize, j: usize) -> Result<Var> {
        match (resampling_rule(i, j), i) {
            (Resampling::Identity, _) => Ok(x),
            (Resampling::Up(f), _) => Ok(cx.g.upsample_bilinear(x, f)?),
            (Resampling::Down(1), 2) => self.down_2_1.forward(cx, x),
            (Resampling::Down(1), _) => self.down_4_2.forward(cx, x),
            (Resampling::Down(_), _) => {
                let h = self.down_4_1[0].forward(cx, x)?;
                let h = cx.g.leaky_relu(h, LEAK);
                self.down_4_1[1].forward(cx, h)
            }
        }
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, bundle: &ScaleBundle<Var>) -> Result<ScaleBundle<Var>> {
        check_bundle(&cx.g, bundle)?;
        let mut out = [bundle.u1; 3];
        for (jk, &j) in SCALES.iter().enumerate() {
            let mut branches = Vec::with_capacity(3);
            for &i in &SCALES {
                branches.push(self.resample(cx, bundle.get(i), i, j)?);
            }
            out[jk] = self.fuse[jk].forward(cx, &branches)?;
        }
        Ok(ScaleBundle { u1: out[0], u2: out[1], u4: out[2] })
    }
}

/// One ×2 step: substrates, optional FSI, merge at the doubled resolution.
#[derive(Clone, Debug)]
pub struct RsmuStage {
    pub substrates: [Conv; 3],
    pub fsi: Option<Fsi>,
    pub merge: Conv,
}

impl RsmuStage {
    pub fn build<T: Real>(b: &mut Builder<T>, name: &str, c: usize, fsi: bool) -> Self {
        let substrates = std::array::from_fn(|k| b.conv(&format!("{name}.sub{}", SCALES[k]), c, c * SCALES[k] * SCALES[k], 1));
        let fsi = fsi.then(|| Fsi::build(b, &format!("{name}.fsi"), c));
        let merge = b.conv(&format!("{name}.merge"), 6 * c, c, 1);
        Self { substrates, fsi, merge }
    }

    pub fn substrates<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Result<ScaleBundle<Var>> {
        let mut u = [x; 3];
        for (k, &s) in SCALES.iter().enumerate() {
            let t = self.substrates[k].forward(cx, x)?;
            u[k] = cx.g.pixel_shuffle(t, s)?;
        }
        Ok(ScaleBundle { u1: u[0], u2: u[1], u4: u[2] })
    }

    /// `(B, C, H, W) → (B, C, 2H, 2W)`.
    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let mut bundle = self.substrates(cx, x)?;
        if let Some(fsi) = &self.fsi {
            bundle = fsi.forward(cx, &bundle)?;
        }
        let from4 = cx.g.pixel_unshuffle(bundle.u4, 2)?;
        let from1 = cx.g.upsample_bilinear(bundle.u1, 2)?;
        let cat = cx.g.concat(&[bundle.u2, from4, from1], 1)?;
        let m = self.merge.forward(cx, cat)?;
        Ok(cx.g.leaky_relu(m, LEAK))
    }
}

/// `logit(clamp(bicubic(v), δ, 1-δ))` at the output size.
pub fn logit_skip<T: Real>(g: &mut Graph<T>, v: Var, out_hw: (usize, usize)) -> Result<Var> {
    let up = g.resample(v, out_hw, Filter::Bicubic, false)?;
    let p = g.clamp(up, SKIP_DELTA, 1.0 - SKIP_DELTA);
    let q = g.mul_scalar(p, -1.0);
    let q = g.add_scalar(q, 1.0);
    let lp = g.unary(p, ultrabm_tensor::Unary::Ln);
    let lq = g.unary(q, ultrabm_tensor::Unary::Ln);
    Ok(g.sub(lp, lq)?)
}

fn finish<T: Real>(cx: &mut Ctx<T>, head: &Conv, feat: Var, skip: Option<Var>) -> Result<Var> {
    let mut z = head.forward(cx, feat)?;
    if let Some(v) = skip {
        let s = cx.g.shape(z).to_vec();
        let l = logit_skip(&mut cx.g, v, (s[2], s[3]))?;
        z = cx.g.add(z, l)?;
    }
    Ok(cx.g.sigmoid(z))
}

/// The full up-sampler: one stage for ×2, two chained stages for ×4.
#[derive(Clone, Debug)]
pub struct Rsmu {
    pub stages: Vec<RsmuStage>,
    pub head: Conv,
    pub channels: usize,
}

impl Rsmu {
    pub fn build<T: Real>(b: &mut Builder<T>, c: usize, scale: usize, fsi: bool) -> Result<Self> {
        let n = match scale {
            2 => 1,
            4 => 2,
            s => return config(format!("unsupported up-sampling scale {s}")),
        };
        let stages = (0..n).map(|k| RsmuStage::build(b, &format!("rsmu.stage{}", k + 1), c, fsi)).collect();
        Ok(Self { stages, head: b.head("rsmu.head", c, 3), channels: c })
    }

    pub fn scale(&self) -> usize {
        1 << self.stages.len()
    }

    /// Up-samples `x` and maps it to a 3-channel image in `[0, 1]`, adding the
    /// logit of the bicubic-enlarged `skip` image when given.
    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var, skip: Option<Var>) -> Result<Var> {
        let c = cx.g.value(x).dims4()?.1;
        if c % 16 != 0 || c != self.channels {
            return shape(format!("up-sampler expects {} channels (a multiple of 16), got {c}", self.channels));
        }
        let mut h = x;
        for stage in &self.stages {
            h = stage.forward(cx, h)?;
        }
        finish(cx, &self.head, h, skip)
    }
}

/// The ablation replacement: bilinear enlargement then the same head.
#[derive(Clone, Debug)]
pub struct BilinearUp {
    pub head: Conv,
    pub scale: usize,
}

impl BilinearUp {
    pub fn build<T: Real>(b: &mut Builder<T>, c: usize, scale: usize) -> Result<Self> {
        if scale != 2 && scale != 4 {
            return config(format!("unsupported up-sampling scale {scale}"));
        }
        Ok(Self { head: b.head("bilinear.head", c, 3), scale })
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var, skip: Option<Var>) -> Result<Var> {
        let up = cx.g.upsample_bilinear(x, self.scale)?;
        finish(cx, &self.head, up, skip)
    }
}

#[derive(Clone, Debug)]
pub enum Upsampler {
    Rsmu(Rsmu),
    Bilinear(BilinearUp),
}

impl Upsampler {
    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var, skip: Option<Var>) -> Result<Var> {
        match self {
            Upsampler::Rsmu(r) => r.forward(cx, x, skip),
            Upsampler::Bilinear(b) => b.forward(cx, x, skip),
        }
    }
}

/// Tensor-level entry point without gradient tracking.
pub fn rsmu_forward<T: Real>(
    up: &Rsmu,
    params: &crate::nn::ParamStore<T>,
    x: &Tensor<T>,
    skip: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let mut cx = Ctx::new(params, false);
    let xv = cx.g.constant(x.clone());
    let sv = skip.map(|s| cx.g.constant(s.clone()));
    let y = up.forward(&mut cx, xv, sv)?;
    Ok(cx.g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn shuffle_examples() {
        let x = Tensor::<f64>::from_fn([1, 4, 2, 2], |i| i as f64);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), [1, 1, 4, 4]);
        assert_eq!(pixel_unshuffle(&y, 2).unwrap(), x);
        assert!(pixel_shuffle(&Tensor::<f64>::zeros([1, 3, 2, 2]), 2).is_err());
        // out[0, 0, 1, 0] comes from channel 2 (i=1, j=0) at (0, 0)
        assert_eq!(y.at(&[0, 0, 1, 0]), x.at(&[0, 2, 0, 0]));
    }

    #[test]
    fn resampling_rules_cover_all_pairs() {
        let mut store = ParamStore::new();
        let fsi = Fsi::build(&mut Builder::new(&mut store, 0), "f", 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (h, w) = (3, 5);
        let mut cx = Ctx::new(&store, false);
        for &i in &SCALES {
            for &j in &SCALES {
                let rule = resampling_rule(i, j);
                let fired = [i == j, j > i, j < i].iter().filter(|b| **b).count();
                assert_eq!(fired, 1);
                match rule {
                    Resampling::Identity => assert_eq!(i, j),
                    Resampling::Up(f) => assert!(j > i && f * i == j),
                    Resampling::Down(n) => assert!(j < i && (j << n) == i),
                }
                let x = cx.g.constant(rand_t(&[2, 3, i * h, i * w], &mut rng));
                let y = fsi.resample(&mut cx, x, i, j).unwrap();
                assert_eq!(cx.g.shape(y), [2, 3, j * h, j * w], "({i}, {j})");
            }
        }
    }

    #[test]
    fn bilinear_paths_keep_constants() {
        let mut store = ParamStore::<f64>::new();
        let fsi = Fsi::build(&mut Builder::new(&mut store, 0), "f", 2);
        let mut cx = Ctx::new(&store, false);
        let x = cx.g.constant(Tensor::full([1, 2, 3, 3], 0.37));
        for (i, j) in [(1, 2), (1, 4), (2, 4)] {
            let x = if i == 1 { x } else { cx.g.constant(Tensor::full([1, 2, 3 * i, 3 * i], 0.37)) };
            let y = fsi.resample(&mut cx, x, i, j).unwrap();
            assert!(cx.g.value(y).data().iter().all(|v| (v - 0.37).abs() < 1e-15));
        }
    }

    #[test]
    fn fsi_preserves_bundle_shapes() {
        let mut store = ParamStore::new();
        let fsi = Fsi::build(&mut Builder::new(&mut store, 1), "f", 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cx = Ctx::new(&store, false);
        let b = ScaleBundle {
            u1: cx.g.constant(rand_t(&[1, 4, 2, 3], &mut rng)),
            u2: cx.g.constant(rand_t(&[1, 4, 4, 6], &mut rng)),
            u4: cx.g.constant(rand_t(&[1, 4, 8, 12], &mut rng)),
        };
        let out = fsi.forward(&mut cx, &b).unwrap();
        for s in SCALES {
            assert_eq!(cx.g.shape(out.get(s)), cx.g.shape(b.get(s)));
        }
        let bad = ScaleBundle { u4: b.u2, ..b };
        assert!(fsi.forward(&mut cx, &bad).is_err());
    }

    #[test]
    fn skff_identical_branches() {
        let mut store = ParamStore::new();
        let sk = Skff::build(&mut Builder::new(&mut store, 5), "s", 6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut cx = Ctx::new(&store, false);
        let b = cx.g.constant(rand_t(&[2, 6, 3, 3], &mut rng));
        let y = sk.forward(&mut cx, &[b, b, b]).unwrap();
        assert!(cx.g.value(y).max_abs_diff(cx.g.value(b)) < 1e-15);
    }

    #[test]
    fn skff_matches_hand_rolled_oracle() {
        let mut store = ParamStore::new();
        let sk = Skff::build(&mut Builder::new(&mut store, 7), "s", 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for id in store.ids().collect::<Vec<_>>() {
            for v in store.get_mut(id).data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let br: Vec<Tensor<f64>> = (0..3).map(|_| rand_t(&[1, 2, 2, 2], &mut rng)).collect();
        let p = |n: &str| store.get(store.find(n).unwrap()).data().to_vec();
        let (c, d) = (2, 4);
        let pooled: Vec<f64> = (0..c).map(|ch| (0..4).map(|px| br.iter().map(|b| b.data()[ch * 4 + px]).sum::<f64>()).sum::<f64>() / 4.0).collect();
        let (sw, sb) = (p("s.squeeze.weight"), p("s.squeeze.bias"));
        let z: Vec<f64> = (0..d)
            .map(|k| {
                let a = sb[k] + (0..c).map(|ch| sw[k * c + ch] * pooled[ch]).sum::<f64>();
                if a > 0.0 { a } else { 0.2 * a }
            })
            .collect();
        let logits: Vec<Vec<f64>> = (0..3)
            .map(|br_i| {
                let (ew, eb) = (p(&format!("s.excite{br_i}.weight")), p(&format!("s.excite{br_i}.bias")));
                (0..c).map(|ch| eb[ch] + (0..d).map(|k| ew[ch * d + k] * z[k]).sum::<f64>()).collect()
            })
            .collect();
        let mut oracle = vec![0.0; 8];
        for ch in 0..c {
            let m = (0..3).map(|b| logits[b][ch]).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = (0..3).map(|b| (logits[b][ch] - m).exp()).collect();
            let zsum: f64 = e.iter().sum();
            for px in 0..4 {
                oracle[ch * 4 + px] = (0..3).map(|b| e[b] / zsum * br[b].data()[ch * 4 + px]).sum();
            }
        }
        let mut cx = Ctx::new(&store, false);
        let vars: Vec<Var> = br.into_iter().map(|t| cx.g.constant(t)).collect();
        let y = sk.forward(&mut cx, &vars).unwrap();
        for (a, b) in cx.g.value(y).data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn rsmu_scales_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::from_fn([1, 32, 32, 32], |_| rng.random_range(-1.0f32..1.0));
        for (scale, size) in [(2, 64), (4, 128)] {
            let mut store = ParamStore::new();
            let up = Rsmu::build(&mut Builder::new(&mut store, 0), 32, scale, true).unwrap();
            let y = rsmu_forward(&up, &store, &x, None).unwrap();
            assert_eq!(y.shape(), [1, 3, size, size]);
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let mut store = ParamStore::<f32>::new();
        assert!(matches!(Rsmu::build(&mut Builder::new(&mut store, 0), 32, 3, true), Err(crate::Error::Config(_))));
        let up = Rsmu::build(&mut Builder::new(&mut store, 0), 24, 2, true).unwrap();
        assert!(rsmu_forward(&up, &store, &Tensor::zeros([1, 24, 4, 4]), None).is_err());
    }

    #[test]
    fn bilinear_replacement_shapes() {
        let mut store = ParamStore::<f32>::new();
        let up = BilinearUp::build(&mut Builder::new(&mut store, 0), 16, 4).unwrap();
        let mut cx = Ctx::new(&store, false);
        let x = cx.g.constant(Tensor::full([2, 16, 8, 8], 0.1));
        let v = cx.g.constant(Tensor::full([2, 3, 8, 8], 0.5));
        let y = up.forward(&mut cx, x, Some(v)).unwrap();
        assert_eq!(cx.g.shape(y), [2, 3, 32, 32]);
    }

    #[test]
    fn zero_head_passes_skip_through() {
        let mut store = ParamStore::<f64>::new();
        let up = BilinearUp::build(&mut Builder::new(&mut store, 0), 16, 2).unwrap();
        let w = store.find("bilinear.head.weight").unwrap();
        *store.get_mut(w) = Tensor::zeros(store.get(w).shape().to_vec());
        let v = Tensor::from_fn([1, 3, 4, 4], |i| 0.1 + 0.8 * (i % 7) as f64 / 7.0);
        let mut cx = Ctx::new(&store, false);
        let (xv, vv) = (cx.g.constant(Tensor::zeros([1, 16, 4, 4])), cx.g.constant(v.clone()));
        let y = up.forward(&mut cx, xv, Some(vv)).unwrap();
        let oracle = ultrabm_tensor::ops::resample::ResamplePlan::new((4, 4), (8, 8), Filter::Bicubic, false)
            .unwrap()
            .forward(&v)
            .unwrap()
            .map(|p| p.clamp(SKIP_DELTA, 1.0 - SKIP_DELTA));
        assert!(cx.g.value(y).max_abs_diff(&oracle) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn shuffle_round_trip(c in 1usize..4, r in 1usize..4, h in 1usize..4, w in 1usize..4, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_t(&[2, c * r * r, h, w], &mut rng);
            let y = pixel_shuffle(&x, r).unwrap();
            prop_assert_eq!(y.numel(), x.numel());
            prop_assert_eq!(pixel_unshuffle(&y, r).unwrap(), x);
        }

        #[test]
        fn skff_weights_are_a_simplex(seed in 0u64..10_000, c in 1usize..10) {
            let mut store = ParamStore::new();
            let sk = Skff::build(&mut Builder::new(&mut store, seed), "s", c);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
            let mut cx = Ctx::new(&store, false);
            let br: Vec<Var> = (0..3).map(|_| cx.g.constant(rand_t(&[2, c, 2, 3], &mut rng).map(|v| v * 4.0))).collect();
            let w = sk.weights(&mut cx, &br).unwrap();
            let wv = cx.g.value(w);
            for b in 0..2 {
                for ch in 0..c {
                    let col: Vec<f64> = (0..3).map(|k| wv.at(&[b, k, ch, 0])).collect();
                    prop_assert!((col.iter().sum::<f64>() - 1.0).abs() <= 1e-5);
                    prop_assert!(col.iter().all(|v| *v >= 0.0));
                }
            }
        }
    }
}
