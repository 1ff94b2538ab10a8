use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use ultrabm::imagedata::{bicubic_resize, load_image, load_manifest, make_synthetic_pair, save_image, ManifestEntry, PairManifest, SyntheticSpec};
use ultrabm::metrics::{Lpips, MetricMeans, MetricReport, NiqeModel};
use ultrabm::pipeline::*;
use ultrabm::tensor::Tensor;

use crate::args::*;
use crate::run::*;

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Applies the keys of a config file on top of `base`.
fn with_file<T: Serialize + for<'de> Deserialize<'de>>(base: T, file: Option<&PathBuf>, sources: &mut Sources) -> Outcome<T> {
    let Some(path) = file else { return Ok(base) };
    let over: Value = load_config(path)?;
    let mut v = serde_json::to_value(&base).expect("config serializes");
    merge(&mut v, over);
    sources.push(format!("file:{}", path.display()));
    serde_json::from_value(v).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

// ---- gen-data ---------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub count: usize,
    pub scale: usize,
    /// Low-resolution `[H, W]`.
    pub size: [usize; 2],
    /// Exposure interval in stops.
    pub ev: [f64; 2],
    pub noise_sigma: f64,
    pub seed: u64,
    pub bit_depth: u8,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { count: 8, scale: 2, size: [64, 64], ev: [-5.0, -2.5], noise_sigma: 0.01, seed: 0, bit_depth: 16 }
    }
}

fn parse_size(s: &str) -> Outcome<[usize; 2]> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let n: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse::<usize>()).collect();
    match n.as_deref() {
        Ok([a]) => Ok([*a, *a]),
        Ok([h, w]) => Ok([*h, *w]),
        _ => Err(Failure::Usage(format!("--size expects N or HxW, got `{s}`"))),
    }
}

fn parse_range(s: &str) -> Outcome<[f64; 2]> {
    let bad = || Failure::Usage(format!("--ev expects A..B, got `{s}`"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    Ok([a.min(b), a.max(b)])
}

fn dir_is_empty(dir: &Path) -> bool {
    std::fs::read_dir(dir).map(|mut d| d.next().is_none()).unwrap_or(true)
}

pub fn gen_data(a: GenDataArgs) -> Outcome {
    let mut sources = Sources::new();
    let mut cfg = with_file(GenConfig::default(), a.common.config.as_ref(), &mut sources)?;
    let mut flagged = false;
    if let Some(v) = a.count {
        cfg.count = v;
        flagged = true;
    }
    if let Some(v) = a.scale {
        cfg.scale = v;
        flagged = true;
    }
    if let Some(v) = &a.size {
        cfg.size = parse_size(v)?;
        flagged = true;
    }
    if let Some(v) = &a.ev {
        cfg.ev = parse_range(v)?;
        flagged = true;
    }
    if let Some(v) = a.noise {
        cfg.noise_sigma = v;
        flagged = true;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
        flagged = true;
    }
    if let Some(v) = a.bit_depth {
        cfg.bit_depth = v;
        flagged = true;
    }
    if flagged {
        sources.push("flags");
    }
    if cfg.count == 0 {
        return Err(Failure::Validation("count must be positive".into()));
    }
    if cfg.bit_depth != 8 && cfg.bit_depth != 16 {
        return Err(Failure::Usage(format!("bit depth must be 8 or 16, got {}", cfg.bit_depth)));
    }
    if !(-5.0..=0.0).contains(&cfg.ev[0]) || !(-5.0..=0.0).contains(&cfg.ev[1]) || cfg.ev[0] > cfg.ev[1] {
        return Err(Failure::Validation(format!("ev range {:?} must lie within [-5, 0]", cfg.ev)));
    }
    let out = &a.common.out_dir;
    if !a.force && !dir_is_empty(out) {
        return Err(Failure::Validation(format!("output directory {} is not empty; pass --force to write into it", out.display())));
    }
    write_run_config(out, "gen-data", &sources, &cfg, &[("config", a.common.config.as_ref())])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut manifest = PairManifest::default();
    for i in 0..cfg.count {
        let ev = cfg.ev[0] + (cfg.ev[1] - cfg.ev[0]) * rng.random::<f64>();
        let mut spec = SyntheticSpec::new(rng.random(), ev, cfg.scale, (cfg.size[0], cfg.size[1]));
        spec.noise_sigma = cfg.noise_sigma;
        let (low, reference) = make_synthetic_pair(&spec)?;
        let (lp, rp) = (out.join(format!("low_{i:04}.png")), out.join(format!("ref_{i:04}.png")));
        save_image(&lp, low.tensor(), cfg.bit_depth)?;
        save_image(&rp, reference.tensor(), cfg.bit_depth)?;
        manifest.entries.push(ManifestEntry { low: lp, reference: rp, scale: cfg.scale, ev });
    }
    manifest.save(&out.join("manifest.json"))?;
    println!("wrote {} pairs to {}", cfg.count, out.display());
    Ok(())
}

// ---- train --------------------------------------------------------------------

/// Resolves a training configuration: `base` (defaults or a checkpoint's),
/// then the config file, then flags.
fn resolve_train(base: TrainConfig, file: Option<&PathBuf>, f: &TrainFlags, sources: &mut Sources) -> Outcome<TrainConfig> {
    let mut cfg = with_file(base, file, sources)?;
    let before = cfg.clone();
    if let Some(p) = f.profile {
        cfg.schedule = Schedule::profile(match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        });
    }
    if let Some(n) = f.iterations {
        cfg.schedule = Schedule::progressive(n);
    }
    if f.batch.is_some() || f.patch.is_some() {
        let first = cfg.schedule.stages[0];
        cfg.schedule = Schedule::single(f.batch.unwrap_or(first.batch), f.patch.unwrap_or(first.patch), cfg.schedule.total());
    }
    if let Some(s) = f.scale {
        cfg.model.scale = s;
    }
    if let Some(s) = f.seed {
        cfg.model.seed = s;
        cfg.data_seed = s;
    }
    if let Some(v) = f.lr {
        cfg.optim.lr = v;
    }
    if let Some(v) = f.warmup {
        cfg.optim.warmup = v;
    }
    if let Some(v) = f.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if f.no_augment {
        cfg.augment = false;
    }
    disable_all(&mut cfg.model.ablations, &f.ablate)?;
    if cfg != before || f.profile.is_some() {
        sources.push("flags");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn progress(total: usize) -> impl FnMut(&LossRecord) {
    let every = (total / 20).max(1);
    move |r: &LossRecord| {
        if r.iter.is_multiple_of(every) || r.iter == total {
            eprintln!("iter {:>7}/{total}  total {:.5}  l_r {:.5}  lr {:.2e}", r.iter, r.total, r.l_r, r.lr);
        }
    }
}

fn run_training(cfg: &TrainConfig, data: &TrainData<f32>, state: TrainState<f32>, out: &Path) -> Outcome<TrainState<f32>> {
    let mut cb = progress(cfg.schedule.total());
    let (state, _) = train(cfg, data, state, TrainOptions { out_dir: Some(out), until: None, on_step: Some(&mut cb) })?;
    Ok(state)
}

pub fn train_cmd(a: TrainArgs) -> Outcome {
    let mut sources = Sources::new();
    let (state, base) = match &a.resume {
        Some(p) => {
            let (st, c) = load_checkpoint::<f32>(p)?;
            sources.push(format!("checkpoint:{}", p.display()));
            (Some(st), c)
        }
        None => (None, TrainConfig::default()),
    };
    let cfg = resolve_train(base, a.common.config.as_ref(), &a.flags, &mut sources)?;
    let out = &a.common.out_dir;
    write_run_config(out, "train", &sources, &cfg, &[("data", Some(&a.data)), ("resume", a.resume.as_ref()), ("config", a.common.config.as_ref())])?;
    let data = TrainData::<f32>::from_manifest(&load_manifest(&a.data)?)?;
    let state = match state {
        Some(s) => s,
        None => TrainState::new(build_model(&cfg.model)?),
    };
    let start = state.iter;
    let state = run_training(&cfg, &data, state, out)?;
    println!("trained iterations {}..{} -> {}", start, state.iter, out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

// ---- eval ---------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ModelChoice {
    /// Scale of an untrained model, or the scale a checkpoint must have.
    pub scale: Option<usize>,
    /// Initialization seed of an untrained model.
    pub seed: u64,
}


impl ModelChoice {
    fn apply(&mut self, scale: Option<usize>, seed: Option<u64>, sources: &mut Sources) {
        if scale.is_some() || seed.is_some() {
            sources.push("flags");
        }
        if scale.is_some() {
            self.scale = scale;
        }
        if let Some(s) = seed {
            self.seed = s;
        }
    }

    fn load(&self, checkpoint: Option<&PathBuf>) -> Outcome<Model<f32>> {
        match checkpoint {
            Some(p) => {
                let (m, _) = load_model::<f32>(p)?;
                if let Some(s) = self.scale {
                    if s != m.config().scale {
                        return Err(Failure::Validation(format!("checkpoint {} has scale {}, but scale {s} was requested", p.display(), m.config().scale)));
                    }
                }
                Ok(m)
            }
            None => {
                let cfg = ModelConfig { seed: self.seed, ..ModelConfig::with_scale(self.scale.unwrap_or(2)) };
                Ok(build_model(&cfg)?)
            }
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub model: ModelChoice,
    pub grid: bool,
    pub niqe: bool,
}

struct Metrics {
    lpips: Lpips,
    niqe: Option<NiqeModel>,
}

impl Metrics {
    fn load(f: &MetricFlags) -> Outcome<Self> {
        let lpips = match &f.lpips_backbone {
            Some(b) => Lpips::from_files(b, f.lpips_lin.as_deref())?,
            None => Lpips::uncalibrated(),
        };
        let niqe = match (&f.niqe_model, f.no_niqe) {
            (_, true) => None,
            (Some(p), false) => Some(NiqeModel::load(p)?),
            (None, false) => Some(NiqeModel::bundled()),
        };
        Ok(Self { lpips, niqe })
    }

    fn options(&self) -> EvalOptions<'_> {
        EvalOptions { lpips: &self.lpips, niqe: self.niqe.as_ref() }
    }
}

/// Input (bicubic-enlarged), output and reference side by side.
pub fn mosaic(low: &Tensor<f32>, y: &Tensor<f32>, reference: &Tensor<f32>) -> Outcome<Tensor<f32>> {
    let (_, _, h, w) = y.dims4().map_err(ultrabm::Error::from)?;
    let up = bicubic_resize(low, (h, w))?.map(|v| v.clamp(0.0, 1.0));
    let panels = [&up, y, reference];
    let total_w = 3 * w;
    Ok(Tensor::from_fn([1, 3, h, total_w], |i| {
        let (c, r, col) = (i / (h * total_w), (i / total_w) % h, i % total_w);
        panels[col / w].data()[c * h * w + r * w + col % w]
    }))
}

fn score(model: &Model<f32>, manifest: &PairManifest, metrics: &Metrics, grid_dir: Option<&Path>, out: &Path) -> Outcome<MetricReport> {
    if let Some(g) = grid_dir {
        create_dir(g)?;
    }
    let report = evaluate(model, manifest, &metrics.options(), |i, low, y, r| {
        if let Some(g) = grid_dir {
            let stem = manifest.entries[i].low.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            save_image(&g.join(format!("{i:04}_{stem}.png")), &mosaic(low, y, r).map_err(|e| ultrabm::Error::Validation(e.to_string()))?, 8)?;
        }
        Ok(())
    })?;
    report.write_csv(&out.join("metrics.csv"))?;
    report.write_json(&out.join("metrics.json"))?;
    Ok(report)
}

fn summary(m: &MetricMeans) -> String {
    let niqe = m.niqe.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
    format!("PSNR {:.4}  SSIM {:.4}  RMSE {:.5}  LPIPS {:.4}  NIQE {niqe}  LOE {:.2}", m.psnr, m.ssim, m.rmse, m.lpips, m.loe)
}

pub fn eval_cmd(a: EvalArgs) -> Outcome {
    let mut sources = Sources::new();
    let mut cfg = with_file(EvalConfig { niqe: true, ..Default::default() }, a.common.config.as_ref(), &mut sources)?;
    cfg.model.apply(a.scale, a.seed, &mut sources);
    if a.grid {
        cfg.grid = true;
    }
    if a.metrics.no_niqe {
        cfg.niqe = false;
    }
    let out = &a.common.out_dir;
    write_run_config(out, "eval", &sources, &cfg, &[("data", Some(&a.data)), ("checkpoint", a.checkpoint.as_ref()), ("config", a.common.config.as_ref())])?;
    let model = cfg.model.load(a.checkpoint.as_ref())?;
    let manifest = load_manifest(&a.data)?;
    let metrics = Metrics::load(&MetricFlags { no_niqe: !cfg.niqe, ..a.metrics.clone() })?;
    let grid = cfg.grid.then(|| out.join("grid"));
    let report = score(&model, &manifest, &metrics, grid.as_deref(), out)?;
    println!("{} images  {}", report.rows.len(), summary(&report.aggregate()));
    Ok(())
}

// ---- infer --------------------------------------------------------------------

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub model: ModelChoice,
    /// PNG bit depth of the output; the input's depth when unset.
    pub bit_depth: Option<u8>,
}

pub fn infer_cmd(a: InferArgs) -> Outcome {
    let mut sources = Sources::new();
    let mut cfg = with_file(InferConfig::default(), a.common.config.as_ref(), &mut sources)?;
    cfg.model.apply(a.scale, a.seed, &mut sources);
    if a.bit_depth.is_some() {
        cfg.bit_depth = a.bit_depth;
    }
    if let Some(d) = cfg.bit_depth {
        if d != 8 && d != 16 {
            return Err(Failure::Usage(format!("bit depth must be 8 or 16, got {d}")));
        }
    }
    let out = &a.common.out_dir;
    write_run_config(out, "infer", &sources, &cfg, &[("input", Some(&a.input)), ("checkpoint", a.checkpoint.as_ref()), ("config", a.common.config.as_ref())])?;
    let model = cfg.model.load(a.checkpoint.as_ref())?;
    let img = load_image(&a.input)?;
    let depth = cfg.bit_depth.or(img.bit_depth()).unwrap_or(8);
    let s = model.config().scale;
    let y = enhance(&model, img.tensor())?;
    let name = a.output.clone().unwrap_or_else(|| {
        let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
        format!("{stem}_x{s}.png")
    });
    let path = out.join(name);
    save_image(&path, &y, depth)?;
    println!("{}x{} -> {}x{}: {}", img.height(), img.width(), y.shape()[2], y.shape()[3], path.display());
    Ok(())
}

// ---- ablate -------------------------------------------------------------------

pub const DEFAULT_VARIANTS: [&str; 3] = ["isdm", "rsmu", "l_sl"];

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub train: TrainConfig,
    pub variants: Vec<String>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self { train: TrainConfig::default(), variants: DEFAULT_VARIANTS.map(String::from).to_vec() }
    }
}

#[derive(Serialize)]
struct AblationRow {
    variant: String,
    psnr: f64,
    ssim: f64,
    rmse: f64,
    lpips: f64,
    loe: f64,
    /// Full-model PSNR minus this variant's.
    psnr_gap: f64,
}

pub fn ablate_cmd(a: AblateArgs) -> Outcome {
    let mut sources = Sources::new();
    let mut cfg = with_file(AblateConfig::default(), a.common.config.as_ref(), &mut sources)?;
    cfg.train = resolve_train(cfg.train, None, &a.flags, &mut sources)?;
    if !a.variants.is_empty() {
        cfg.variants = a.variants.clone();
        sources.push("flags");
    }
    for v in &cfg.variants {
        // reject unknown names before any work
        cfg.train.model.ablations.clone().disable(v)?;
    }
    let out = &a.common.out_dir;
    write_run_config(out, "ablate", &sources, &cfg, &[("data", Some(&a.data)), ("eval_data", a.eval_data.as_ref()), ("config", a.common.config.as_ref())])?;
    let data = TrainData::<f32>::from_manifest(&load_manifest(&a.data)?)?;
    let eval_manifest = load_manifest(a.eval_data.as_ref().unwrap_or(&a.data))?;
    let metrics = Metrics::load(&a.metrics)?;
    let mut rows: Vec<AblationRow> = vec![];
    let names: Vec<String> = std::iter::once("full".to_string()).chain(cfg.variants.iter().cloned()).collect();
    for name in &names {
        let mut c = cfg.train.clone();
        if name != "full" {
            c.model.ablations.disable(name)?;
        }
        let dir = out.join(name);
        create_dir(&dir)?;
        eprintln!("variant {name}");
        let state = run_training(&c, &data, TrainState::new(build_model(&c.model)?), &dir)?;
        let m = score(&state.model, &eval_manifest, &metrics, None, &dir)?.aggregate();
        let gap = rows.first().map(|f| f.psnr - m.psnr).unwrap_or(0.0);
        println!("{name:>6}  {}  gap {gap:+.4}", summary(&m));
        rows.push(AblationRow { variant: name.clone(), psnr: m.psnr, ssim: m.ssim, rmse: m.rmse, lpips: m.lpips, loe: m.loe, psnr_gap: gap });
    }
    let csv_path = out.join("ablation.csv");
    let mut text = String::from("variant,psnr,ssim,rmse,lpips,loe,psnr_gap\n");
    for r in &rows {
        text += &format!("{},{},{},{},{},{},{}\n", r.variant, r.psnr, r.ssim, r.rmse, r.lpips, r.loe, r.psnr_gap);
    }
    std::fs::write(&csv_path, text).map_err(|e| io_failure(&csv_path, e))?;
    let json_path = out.join("ablation.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n").map_err(|e| io_failure(&json_path, e))?;
    Ok(())
}
