use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config, Error, Result};
use crate::losses::{LossWeights, LuminanceForm};

/// U-Net depth, fixed by the five modulated decoder levels.
pub const LEVELS: usize = 5;

/// Widths of the built-in semantic encoder stages.
pub const SEMANTIC_WIDTHS: [usize; LEVELS] = [16, 32, 64, 96, 128];

/// Component switches. `true` keeps the component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub isdm: bool,
    pub imu: bool,
    pub smu: bool,
    pub rsmu: bool,
    pub fsi: bool,
    pub l_sl: bool,
    pub l_p: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self { isdm: true, imu: true, smu: true, rsmu: true, fsi: true, l_sl: true, l_p: true }
    }
}

impl Ablations {
    pub const NAMES: [&'static str; 7] = ["isdm", "imu", "smu", "rsmu", "fsi", "l_sl", "l_p"];

    /// Switches off one named component. Removing ISDM also removes both of
    /// its units.
    pub fn disable(&mut self, name: &str) -> Result<()> {
        match name {
            "isdm" => {
                self.isdm = false;
                self.imu = false;
                self.smu = false;
            }
            "imu" => self.imu = false,
            "smu" => self.smu = false,
            "rsmu" => self.rsmu = false,
            "fsi" => self.fsi = false,
            "l_sl" => self.l_sl = false,
            "l_p" => self.l_p = false,
            other => return config(format!("unknown ablation `{other}`; valid names: {}", Self::NAMES.join(", "))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.isdm && (self.imu || self.smu) {
            let unit = if self.smu { "smu" } else { "imu" };
            return config(format!("{unit} requires isdm"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub scale: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub ablations: Ablations,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { scale: 2, base_channels: 16, levels: LEVELS, ablations: Ablations::default(), seed: 0 }
    }
}

impl ModelConfig {
    pub fn with_scale(scale: usize) -> Self {
        Self { scale, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale != 2 && self.scale != 4 {
            return config(format!("scale must be 2 or 4, got {}", self.scale));
        }
        if self.levels != LEVELS {
            return config(format!("levels must be {LEVELS}, got {}", self.levels));
        }
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(16) {
            return config(format!("base_channels must be a positive multiple of 16, got {}", self.base_channels));
        }
        self.ablations.validate()
    }

    /// Channel width of each U-Net level, finest first.
    pub fn widths(&self) -> Vec<usize> {
        (0..self.levels).map(|k| self.base_channels << k).collect()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One constant-batch, constant-patch segment of training. `patch` is the
/// low-resolution crop side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub batch: usize,
    pub patch: usize,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

pub const PAPER_BATCHES: [usize; 6] = [8, 5, 4, 2, 1, 1];
pub const PAPER_PATCHES: [usize; 6] = [32, 48, 64, 96, 128, 128];
pub const PAPER_ITERATIONS: usize = 150_000;
pub const DESK_ITERATIONS: usize = 2_000;
/// Relative length of each stage.
const STAGE_SHARES: [usize; 6] = [92, 64, 48, 36, 36, 24];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule {
    pub stages: Vec<Stage>,
}

impl Schedule {
    /// The six progressive stages with `total` iterations split in the
    /// proportions 92:64:48:36:36:24.
    pub fn progressive(total: usize) -> Self {
        let sum: usize = STAGE_SHARES.iter().sum();
        let mut stages: Vec<Stage> = (0..6)
            .map(|k| Stage { batch: PAPER_BATCHES[k], patch: PAPER_PATCHES[k], iterations: total * STAGE_SHARES[k] / sum })
            .collect();
        let assigned: usize = stages.iter().map(|s| s.iterations).sum();
        stages[5].iterations += total - assigned;
        Self { stages }
    }

    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::progressive(DESK_ITERATIONS),
            Profile::Paper => Self::progressive(PAPER_ITERATIONS),
        }
    }

    pub fn single(batch: usize, patch: usize, iterations: usize) -> Self {
        Self { stages: vec![Stage { batch, patch, iterations }] }
    }

    pub fn total(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }

    /// Stage index and stage of the 0-based iteration `it`.
    pub fn stage_at(&self, it: usize) -> (usize, Stage) {
        let mut end = 0;
        for (k, s) in self.stages.iter().enumerate() {
            end += s.iterations;
            if it < end {
                return (k, *s);
            }
        }
        let k = self.stages.len() - 1;
        (k, self.stages[k])
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return config("schedule has no stages");
        }
        for s in &self.stages {
            if s.batch == 0 || s.patch == 0 || s.patch % 16 != 0 {
                return config(format!("invalid stage {s:?}: batch must be positive and patch a positive multiple of 16"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Linear ramp from 0 over the first `warmup` iterations, then cosine.
    pub warmup: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 2e-4, lr_min: 1e-6, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4, warmup: 0 }
    }
}

impl OptimConfig {
    /// Cosine decay from `lr` at iteration 0 to `lr_min` at `total`, scaled
    /// by `(it + 1) / warmup` during the warmup.
    pub fn lr_at(&self, it: usize, total: usize) -> f64 {
        let ramp = if it < self.warmup { (it + 1) as f64 / self.warmup as f64 } else { 1.0 };
        if total == 0 {
            return self.lr * ramp;
        }
        let t = (it.min(total) as f64) / total as f64;
        ramp * (self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos()))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.lr, self.lr_min, self.eps, self.weight_decay].iter().all(|v| v.is_finite() && *v >= 0.0)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if !ok {
            return config(format!("invalid optimizer settings {self:?}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub optim: OptimConfig,
    pub loss_weights: LossWeights,
    pub luminance_form: LuminanceForm,
    /// Seed of the batch sampler and augmentation.
    pub data_seed: u64,
    /// Random flips of each training crop.
    pub augment: bool,
    /// Write a checkpoint every this many iterations; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: Schedule::profile(Profile::Desk),
            optim: OptimConfig::default(),
            loss_weights: LossWeights::default(),
            luminance_form: LuminanceForm::default(),
            data_seed: 0,
            augment: true,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.optim.validate()?;
        self.loss_weights.validate()
    }

    /// Loss weights with ablated terms set to zero.
    pub fn effective_weights(&self) -> LossWeights {
        let a = &self.model.ablations;
        let mut w = self.loss_weights;
        if !a.l_sl {
            w.sl = 0.0;
        }
        if !a.l_p {
            w.p = 0.0;
        }
        w
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { path: "<config>".into(), msg: e.to_string() })
    }
}
