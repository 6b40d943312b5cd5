//! Layered model configuration.
//!
//! The preset for the task and family comes first. Keys from `--config`
//! replace preset keys, `--set key=value` pairs replace those, and the
//! dedicated flags (`--family`, `--epochs`, `--seed`) are applied last. Values
//! given to `--set` are parsed as JSON and fall back to a plain string.
//!
//! The file is a JSON object with any subset of these keys:
//!
//! | key | type |
//! |---|---|
//! | `components` | list of `{"kappa": f64, "constraint": "free" \| "negative" \| "positive" \| "fixed"}` |
//! | `hidden` | list of layer widths |
//! | `dropout_features`, `dropout_adjacency` | rate in `[0, 1)` |
//! | `nonlinearity` | `"identity"`, `"relu"` or `"tanh"` |
//! | `adjacency` | `"symmetric"` or `"left"` |
//! | `lr_euclidean`, `lr_curvature`, `l2_first_layer` | non-negative f64 |
//! | `epochs`, `patience`, `seed` | integers |
//! | `preprocess` | bool |

use std::fs;
use std::path::PathBuf;

use kgcn_core::model::{Family, ModelConfig};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::ModelArgs;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config file {path} is not valid JSON: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("config file {0} must hold a JSON object")]
    NotAnObject(PathBuf),
    #[error("config override {0:?} is not of the form key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Distortion,
    Nodeclass,
}

fn preset(task: Task, family: Family) -> ModelConfig {
    match task {
        Task::Distortion => ModelConfig::distortion(family),
        Task::Nodeclass => ModelConfig::nodeclass(family),
    }
}

fn object(cfg: &ModelConfig) -> Map<String, Value> {
    match serde_json::to_value(cfg).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!("config serializes to an object"),
    }
}

pub fn resolve(task: Task, args: &ModelArgs, default_family: Family) -> Result<ModelConfig, ConfigError> {
    let family = args.family.unwrap_or(default_family);
    let mut layered = object(&preset(task, family));
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.clone(), source })?;
        let value: Value =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.clone(), source })?;
        let Value::Object(file) = value else {
            return Err(ConfigError::NotAnObject(path.clone()));
        };
        layered.extend(file);
    }
    for kv in &args.overrides {
        let (key, raw) = kv.split_once('=').ok_or_else(|| ConfigError::Override(kv.clone()))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        layered.insert(key.trim().to_string(), value);
    }
    if let Some(f) = args.family {
        layered.insert("components".into(), serde_json::to_value(f.components()).expect("components serialize"));
    }
    if let Some(e) = args.epochs {
        layered.insert("epochs".into(), e.into());
    }
    if let Some(s) = args.seed {
        layered.insert("seed".into(), s.into());
    }
    let cfg: ModelConfig =
        serde_json::from_value(Value::Object(layered)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}
