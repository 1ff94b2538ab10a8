use std::fs::OpenOptions;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ultrabm_tensor::{Real, Tensor, Var};

use super::checkpoint::save_checkpoint;
use super::config::{OptimConfig, Stage, TrainConfig};
use super::model::{Model, Semantic};
use crate::error::{Error, Result};
use crate::imagedata::{load_pairs, rgb_to_gray, PairManifest};
use crate::losses::{
    default_extractor, illum_smooth_loss, luminance_loss, perceptual_loss, recon_loss, total_loss, LossWeights, LuminanceForm, NaturalStats,
};
use crate::nn::{Ctx, FrozenPyramid};

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub l_sl: f64,
    pub l_is: f64,
    pub l_r: f64,
    pub l_p: f64,
    pub total: f64,
    pub lr: f64,
    pub stage: usize,
}

pub const LOG_COLUMNS: [&str; 8] = ["iter", "l_sl", "l_is", "l_r", "l_p", "total", "lr", "stage"];

/// The weighted training objective.
#[derive(Clone, Debug)]
pub struct Objective<T> {
    pub extractor: FrozenPyramid<T>,
    pub weights: LossWeights,
    pub form: LuminanceForm,
    pub stats: NaturalStats,
}

impl<T: Real> Objective<T> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self { extractor: default_extractor(), weights: cfg.effective_weights(), form: cfg.luminance_form, stats: NaturalStats::IMAGENET }
    }

    /// Builds the forward pass and the four loss terms plus their weighted
    /// sum. The perceptual term is skipped (held at zero) when its weight is 0.
    pub fn build(&self, cx: &mut Ctx<T>, model: &Model<T>, x: &Tensor<T>, reference: &Tensor<T>) -> Result<([Var; 4], Var)> {
        let f = model.forward_graph(cx, x, Semantic::FromInput)?;
        let g = &mut cx.g;
        let l_sl = luminance_loss(g, f.v_nl, &self.stats, self.form)?;
        let gray = g.constant(rgb_to_gray(x)?);
        let l_is = illum_smooth_loss(g, f.u_nl, gray)?;
        let r = g.constant(reference.clone());
        let l_r = recon_loss(g, f.y, r)?;
        let l_p = if self.weights.p > 0.0 { perceptual_loss(g, f.y, r, &self.extractor)? } else { g.constant(Tensor::scalar(T::zero())) };
        let parts = [l_sl, l_is, l_r, l_p];
        let total = total_loss(g, parts, &self.weights)?;
        Ok((parts, total))
    }

    /// Loss values without gradients.
    pub fn evaluate(&self, model: &Model<T>, x: &Tensor<T>, reference: &Tensor<T>) -> Result<([f64; 4], f64)> {
        let mut cx = Ctx::new(&model.params, false);
        let (parts, total) = self.build(&mut cx, model, x, reference)?;
        Ok((parts.map(|v| cx.g.value(v).item().f64()), cx.g.value(total).item().f64()))
    }
}

/// Parameters plus AdamW moments.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub model: Model<T>,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Completed iterations.
    pub iter: usize,
}

impl<T: Real> TrainState<T> {
    pub fn new(model: Model<T>) -> Self {
        let zeros: Vec<Tensor<T>> = model.params.ids().map(|id| Tensor::zeros(model.params.get(id).shape().to_vec())).collect();
        Self { m: zeros.clone(), v: zeros, model, iter: 0 }
    }
}

/// Decoupled-weight-decay Adam update of every parameter, `t` counted from 1.
pub fn adamw_update<T: Real>(state: &mut TrainState<T>, grads: &[Tensor<T>], lr: f64, o: &OptimConfig, t: usize) {
    let (b1, b2) = (T::c(o.beta1), T::c(o.beta2));
    let (c1, c2) = (T::c(1.0 - o.beta1), T::c(1.0 - o.beta2));
    let bc1 = T::c(1.0 / (1.0 - o.beta1.powi(t as i32)));
    let bc2 = T::c(1.0 / (1.0 - o.beta2.powi(t as i32)));
    let (lr_t, decay, eps) = (T::c(lr), T::c(1.0 - lr * o.weight_decay), T::c(o.eps));
    let ids: Vec<_> = state.model.params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let p = state.model.params.get_mut(id).data_mut();
        let (m, v, g) = (state.m[k].data_mut(), state.v[k].data_mut(), grads[k].data());
        for i in 0..p.len() {
            m[i] = b1 * m[i] + c1 * g[i];
            v[i] = b2 * v[i] + c2 * g[i] * g[i];
            let step = (m[i] * bc1) / ((v[i] * bc2).sqrt() + eps);
            p[i] = p[i] * decay - lr_t * step;
        }
    }
}

/// One optimization step on `(x, reference)`. Returns the pre-update loss
/// terms and total.
pub fn train_step<T: Real>(
    state: &mut TrainState<T>,
    objective: &Objective<T>,
    optim: &OptimConfig,
    x: &Tensor<T>,
    reference: &Tensor<T>,
    lr: f64,
) -> Result<([f64; 4], f64)> {
    let (parts, total, grads) = {
        let mut cx = Ctx::new(&state.model.params, true);
        let (p, t) = objective.build(&mut cx, &state.model, x, reference)?;
        let parts = p.map(|v| cx.g.value(v).item().f64());
        let total = cx.g.value(t).item().f64();
        if !total.is_finite() || parts.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite loss at iteration {}: l_sl={} l_is={} l_r={} l_p={} total={total}",
                state.iter + 1,
                parts[0],
                parts[1],
                parts[2],
                parts[3]
            )));
        }
        let mut g = cx.g.backward(t)?;
        (parts, total, cx.param_grads(&mut g))
    };
    if let Some(k) = grads.iter().position(|g| !g.all_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient for `{}` at iteration {}", state.model.params.names()[k], state.iter + 1)));
    }
    adamw_update(state, &grads, lr, optim, state.iter + 1);
    state.iter += 1;
    Ok((parts, total))
}

/// Training pairs as `(low, reference)` tensors of one scale.
#[derive(Clone, Debug)]
pub struct TrainData<T> {
    pub pairs: Vec<(Tensor<T>, Tensor<T>)>,
    pub scale: usize,
}

impl<T: Real> TrainData<T> {
    pub fn new(pairs: Vec<(Tensor<T>, Tensor<T>)>, scale: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Validation("no training pairs".into()));
        }
        for (i, (l, r)) in pairs.iter().enumerate() {
            let (lb, _, lh, lw) = l.dims4()?;
            let (rb, _, rh, rw) = r.dims4()?;
            if lb != 1 || rb != 1 || rh != scale * lh || rw != scale * lw {
                return Err(Error::Validation(format!("pair {i}: shapes {:?} and {:?} do not match scale {scale}", l.shape(), r.shape())));
            }
            if lh < 16 || lw < 16 {
                return Err(Error::Validation(format!("pair {i}: input {lh}x{lw} is smaller than 16x16")));
            }
        }
        Ok(Self { pairs, scale })
    }

    pub fn from_manifest(manifest: &PairManifest) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::Validation("manifest has no entries".into()));
        }
        let pairs = load_pairs(manifest)?.into_iter().map(|(l, r)| (l.tensor().cast(), r.tensor().cast())).collect();
        Self::new(pairs, manifest.scale().unwrap_or(1))
    }

    /// The batch of 0-based iteration `it`: random pairs, random aligned
    /// crops of side `min(patch, image)` rounded down to a multiple of 16,
    /// and, with `augment`, random horizontal and vertical flips. Depends
    /// only on `(seed, it)`.
    pub fn batch(&self, stage: &Stage, seed: u64, it: usize, augment: bool) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(it as u64);
        let s = self.scale;
        let side = self.pairs.iter().map(|(l, _)| l.shape()[2].min(l.shape()[3])).min().unwrap_or(0);
        let p = stage.patch.min(side) / 16 * 16;
        let (mut lows, mut refs) = (Vec::new(), Vec::new());
        for _ in 0..stage.batch {
            let (l, r) = &self.pairs[rng.random_range(0..self.pairs.len())];
            let (h, w) = (l.shape()[2], l.shape()[3]);
            let top = rng.random_range(0..=h - p);
            let left = rng.random_range(0..=w - p);
            let (hf, vf): (bool, bool) = (rng.random(), rng.random());
            let mut lc = l.crop(top, left, p, p)?;
            let mut rc = r.crop(s * top, s * left, s * p, s * p)?;
            if augment && hf {
                lc = lc.flip(true)?;
                rc = rc.flip(true)?;
            }
            if augment && vf {
                lc = lc.flip(false)?;
                rc = rc.flip(false)?;
            }
            lows.push(lc);
            refs.push(rc);
        }
        Ok((Tensor::stack_batch(&lows)?, Tensor::stack_batch(&refs)?))
    }
}

pub const LOG_FILE: &str = "loss_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.safetensors";

pub fn checkpoint_name(iter: usize) -> String {
    format!("ckpt_{iter:07}.safetensors")
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Directory for the loss log and checkpoints; nothing is written when `None`.
    pub out_dir: Option<&'a Path>,
    /// Stop after this many completed iterations instead of the schedule total.
    pub until: Option<usize>,
    pub on_step: Option<&'a mut dyn FnMut(&LossRecord)>,
}

struct CsvLog {
    w: csv::Writer<std::fs::File>,
    path: std::path::PathBuf,
}

impl CsvLog {
    fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(LOG_FILE);
        let fresh = std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            w.write_record(LOG_COLUMNS).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        }
        Ok(Self { w, path })
    }

    fn push(&mut self, r: &LossRecord) -> Result<()> {
        self.w.serialize(r).map_err(|e| Error::io(&self.path, std::io::Error::other(e)))?;
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Runs the schedule from `state` (or a fresh model) and returns the final
/// state and the records of the iterations run here.
pub fn train<T: Real>(
    cfg: &TrainConfig,
    data: &TrainData<T>,
    state: TrainState<T>,
    mut opts: TrainOptions<'_>,
) -> Result<(TrainState<T>, Vec<LossRecord>)> {
    cfg.validate()?;
    if *state.model.config() != cfg.model {
        return Err(Error::Config("state was built from a different model configuration".into()));
    }
    if data.scale != cfg.model.scale {
        return Err(Error::Validation(format!("data scale {} does not match model scale {}", data.scale, cfg.model.scale)));
    }
    let objective = Objective::new(cfg);
    let total = cfg.schedule.total();
    let end = opts.until.unwrap_or(total).min(total);
    let mut log = match opts.out_dir {
        Some(d) => Some(CsvLog::open(d)?),
        None => None,
    };
    let mut state = state;
    let mut records = Vec::new();
    while state.iter < end {
        let it = state.iter;
        let (k, stage) = cfg.schedule.stage_at(it);
        let lr = cfg.optim.lr_at(it, total);
        let (x, r) = data.batch(&stage, cfg.data_seed, it, cfg.augment)?;
        let (p, t) = train_step(&mut state, &objective, &cfg.optim, &x, &r, lr)?;
        let rec = LossRecord { iter: state.iter, l_sl: p[0], l_is: p[1], l_r: p[2], l_p: p[3], total: t, lr, stage: k };
        if let Some(l) = log.as_mut() {
            l.push(&rec)?;
        }
        if let Some(cb) = opts.on_step.as_mut() {
            cb(&rec);
        }
        records.push(rec);
        if let Some(d) = opts.out_dir {
            if cfg.checkpoint_every > 0 && state.iter.is_multiple_of(cfg.checkpoint_every) {
                save_checkpoint(&d.join(checkpoint_name(state.iter)), &state, cfg)?;
            }
        }
    }
    if let Some(d) = opts.out_dir {
        save_checkpoint(&d.join(FINAL_CHECKPOINT), &state, cfg)?;
    }
    Ok((state, records))
}
