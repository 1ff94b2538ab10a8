//! Checkpoint layout: one safetensors file with metadata `format_version`,
//! `config_hash` (SHA-256 of the model config JSON), `iter`, `dtype` and
//! `config_json` (the full training config), and tensors `param/<name>`,
//! `adam_m/<name>`, `adam_v/<name>`.

use std::path::Path;

use ultrabm_tensor::{Real, Tensor};

use super::config::TrainConfig;
use super::model::{build_model, Model};
use super::train::TrainState;
use crate::container::TensorFile;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "1";

pub fn save_checkpoint<T: Real>(path: &Path, state: &TrainState<T>, cfg: &TrainConfig) -> Result<()> {
    let mut f = TensorFile::new();
    f.metadata.insert("format_version".into(), FORMAT_VERSION.into());
    f.metadata.insert("config_hash".into(), cfg.model.hash());
    f.metadata.insert("iter".into(), state.iter.to_string());
    f.metadata.insert("dtype".into(), T::DTYPE.into());
    f.metadata.insert("config_json".into(), serde_json::to_string(cfg).expect("config serializes"));
    let p = &state.model.params;
    for (k, id) in p.ids().enumerate() {
        let name = p.name(id);
        f.insert(format!("param/{name}"), p.get(id));
        f.insert(format!("adam_m/{name}"), &state.m[k]);
        f.insert(format!("adam_v/{name}"), &state.v[k]);
    }
    f.save(path)
}

fn section<T: Real>(f: &TensorFile, model: &Model<T>, prefix: &str) -> Result<Vec<(String, Tensor<T>)>> {
    model.params.names().iter().map(|n| Ok((n.clone(), f.get(&format!("{prefix}/{n}"))?))).collect()
}

/// Reads the header and rebuilds the training state it describes.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(TrainState<T>, TrainConfig)> {
    let f = TensorFile::load(path)?;
    let bad = |m: String| Error::Format(format!("{}: {m}", path.display()));
    let version = f.meta("format_version")?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported checkpoint format {version}")));
    }
    let cfg: TrainConfig = serde_json::from_str(f.meta("config_json")?).map_err(|e| bad(format!("config_json: {e}")))?;
    if cfg.model.hash() != f.meta("config_hash")? {
        return Err(bad("config_hash does not match config_json".into()));
    }
    let iter: usize = f.meta("iter")?.parse().map_err(|_| bad("iter is not an integer".into()))?;
    let mut model = build_model::<T>(&cfg.model)?;
    let params = section(&f, &model, "param")?;
    model.params.load_values(params)?;
    let mut state = TrainState::new(model);
    let m = section(&f, &state.model, "adam_m")?;
    let v = section(&f, &state.model, "adam_v")?;
    for (k, ((_, a), (_, b))) in m.into_iter().zip(v).enumerate() {
        if a.shape() != state.m[k].shape() || b.shape() != state.v[k].shape() {
            return Err(bad(format!("moment shape mismatch for `{}`", state.model.params.names()[k])));
        }
        state.m[k] = a;
        state.v[k] = b;
    }
    state.iter = iter;
    Ok((state, cfg))
}

/// Parameters only, for inference and evaluation.
pub fn load_model<T: Real>(path: &Path) -> Result<(Model<T>, TrainConfig)> {
    let (state, cfg) = load_checkpoint(path)?;
    Ok((state.model, cfg))
}
