//! Error classification, config loading and the resolved-run record.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use ultrabm::pipeline::Ablations;
use ultrabm::{Error, ErrorKind};

pub const RUN_CONFIG: &str = "run_config.json";

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Validation(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match (&e, e.kind()) {
            (Error::Config(_) | Error::Parse { .. }, _) => Failure::Usage(e.to_string()),
            (_, ErrorKind::Input) => Failure::Validation(e.to_string()),
            (_, ErrorKind::Runtime) => Failure::Runtime(e.to_string()),
        }
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

pub fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("I/O error on {}: {e}", path.display()))
}

/// Reads a config file. Either the bare settings object or a previous
/// `run_config.json` (whose `config` key is used) is accepted.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if v.get("command").is_some() {
        v = v.get_mut("config").map(Value::take).unwrap_or(Value::Null);
    }
    serde_json::from_value(v).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// Where the resolved settings came from, in application order.
#[derive(Default)]
pub struct Sources(Vec<String>);

impl Sources {
    pub fn new() -> Self {
        Self(vec!["defaults".into()])
    }

    pub fn push(&mut self, s: impl Into<String>) {
        self.0.push(s.into());
    }
}

pub fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

/// Writes `run_config.json` before the command does any work.
pub fn write_run_config<C: Serialize>(out_dir: &Path, command: &str, sources: &Sources, config: &C, paths: &[(&str, Option<&PathBuf>)]) -> Outcome {
    create_dir(out_dir)?;
    let paths: serde_json::Map<String, Value> = paths
        .iter()
        .filter_map(|(k, p)| p.map(|p| (k.to_string(), Value::String(p.display().to_string()))))
        .collect();
    let record = json!({
        "command": command,
        "resolution_order": sources.0,
        "out_dir": out_dir.display().to_string(),
        "paths": paths,
        "config": config,
    });
    let path = out_dir.join(RUN_CONFIG);
    let text = serde_json::to_string_pretty(&record).expect("run config serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| io_failure(&path, e))
}

pub fn disable_all(ab: &mut Ablations, names: &[String]) -> Outcome {
    for n in names {
        ab.disable(n.trim()).map_err(Failure::from)?;
    }
    Ok(())
}
