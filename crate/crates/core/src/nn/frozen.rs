use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ultrabm_tensor::{ConvSpec, Graph, Real, Tensor, Var};

use super::LEAK;
use crate::container::TensorFile;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Downsample {
    /// 2×2 max pool before each stage after the first.
    MaxPool,
    /// First convolution of each later stage has stride 2.
    Strided,
}

/// A fixed-weight convolutional pyramid returning one feature map per stage.
/// Weights live outside any parameter store and never receive updates.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenPyramid<T> {
    stages: Vec<Vec<(Tensor<T>, Tensor<T>)>>,
    down: Downsample,
    relu: bool,
    normalize: Option<([f64; 3], [f64; 3])>,
}

impl<T: Real> FrozenPyramid<T> {
    /// He-initialized 3×3 stages, `convs` per stage, from `seed`.
    pub fn seeded(widths: &[usize], convs: usize, down: Downsample, relu: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut stages = Vec::new();
        for &w in widths {
            let mut stage = Vec::new();
            for _ in 0..convs {
                let fan = cin * 9;
                let normal = Normal::new(0.0, (2.0 / fan as f64).sqrt()).unwrap();
                let wt = Tensor::from_fn([w, cin, 3, 3], |_| T::c(normal.sample(&mut rng)));
                stage.push((wt, Tensor::zeros([w])));
                cin = w;
            }
            stages.push(stage);
        }
        Self { stages, down, relu, normalize: None }
    }

    /// Subtract `mean` and divide by `std` per channel before the first stage.
    pub fn with_input_normalization(mut self, mean: [f64; 3], std: [f64; 3]) -> Self {
        self.normalize = Some((mean, std));
        self
    }

    /// Loads weights stored as `stage{j}.{i}.weight` / `stage{j}.{i}.bias`
    /// with `j` from 1 and `i` from 0.
    pub fn from_file(file: &TensorFile, down: Downsample, relu: bool) -> Result<Self> {
        let mut stages = Vec::new();
        for j in 1.. {
            let mut stage = Vec::new();
            for i in 0.. {
                let key = format!("stage{j}.{i}.weight");
                if !file.tensors.contains_key(&key) {
                    break;
                }
                let w: Tensor<T> = file.get(&key)?;
                let b: Tensor<T> = file.get(&format!("stage{j}.{i}.bias"))?;
                if w.shape().len() != 4 || b.shape() != [w.shape()[0]] {
                    return Err(Error::Format(format!("{key}: bad weight/bias shapes {:?} {:?}", w.shape(), b.shape())));
                }
                stage.push((w, b));
            }
            if stage.is_empty() {
                break;
            }
            stages.push(stage);
        }
        if stages.is_empty() {
            return Err(Error::Format("no stage weights found".into()));
        }
        let mut cin = 3;
        for (w, _) in stages.iter().flatten() {
            if w.shape()[1] != cin || w.shape()[2] % 2 == 0 {
                return Err(Error::Format(format!("weight {:?} does not chain from {cin} channels", w.shape())));
            }
            cin = w.shape()[0];
        }
        Ok(Self { stages, down, relu, normalize: None })
    }

    pub fn to_file(&self) -> TensorFile {
        let mut f = TensorFile::new();
        for (j, stage) in self.stages.iter().enumerate() {
            for (i, (w, b)) in stage.iter().enumerate() {
                f.insert(format!("stage{}.{i}.weight", j + 1), w);
                f.insert(format!("stage{}.{i}.bias", j + 1), b);
            }
        }
        f
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.last().unwrap().0.shape()[0]).collect()
    }

    /// Stage outputs as graph nodes; gradients flow to `x` only.
    pub fn forward_graph(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        let mut h = x;
        if let Some((mean, std)) = self.normalize {
            let m = g.constant(Tensor::from_fn([1, 3, 1, 1], |c| T::c(mean[c])));
            let s = g.constant(Tensor::from_fn([1, 3, 1, 1], |c| T::c(1.0 / std[c])));
            h = g.sub(h, m)?;
            h = g.mul(h, s)?;
        }
        let mut outs = Vec::with_capacity(self.stages.len());
        for (j, stage) in self.stages.iter().enumerate() {
            for (i, (w, b)) in stage.iter().enumerate() {
                let k = w.shape()[2];
                let mut spec = ConvSpec::same(k);
                if j > 0 && i == 0 {
                    match self.down {
                        Downsample::MaxPool => h = g.max_pool2(h)?,
                        Downsample::Strided => spec.stride = 2,
                    }
                }
                let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
                h = g.conv2d(h, wv, Some(bv), spec)?;
                h = if self.relu { g.relu(h) } else { g.leaky_relu(h, LEAK) };
            }
            outs.push(h);
        }
        Ok(outs)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let outs = self.forward_graph(&mut g, xv)?;
        Ok(outs.into_iter().map(|v| g.value(v).clone()).collect())
    }

    pub fn cast<U: Real>(&self) -> FrozenPyramid<U> {
        FrozenPyramid {
            stages: self.stages.iter().map(|s| s.iter().map(|(w, b)| (w.cast(), b.cast())).collect()).collect(),
            down: self.down,
            relu: self.relu,
            normalize: self.normalize,
        }
    }
}
