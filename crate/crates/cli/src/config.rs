//! Loading experiment files.
//!
//! Files are TOML unless the extension is `.json`. Any experiment table may name a
//! `preset` and override single keys of it. A `report.json` written by `run` is itself
//! a valid experiment file: its `config` entry is used.

use std::path::Path;

use nonholo_es::ExperimentConfig;
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::CliError;

pub fn read_value(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
    } else {
        let v: toml::Value = toml::from_str(&text).map_err(|e| CliError::parse(path, e))?;
        serde_json::to_value(v).map_err(|e| CliError::parse(path, e))
    }
}

/// Overlays `top` onto `base`, recursing into tables.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Resolves a `preset` key (and a report's `config` wrapper) into a full experiment.
pub fn experiment_from_value(v: Value) -> Result<ExperimentConfig, CliError> {
    let mut v = match v {
        Value::Object(mut m) if m.contains_key("config") && m.contains_key("metrics") => {
            m.remove("config").unwrap_or(Value::Null)
        }
        other => other,
    };
    let preset = match &mut v {
        Value::Object(m) => m.remove("preset"),
        _ => return Err(CliError::validation(vec!["an experiment must be a table".into()])),
    };
    let full = match preset {
        Some(Value::String(name)) => {
            let mut base = serde_json::to_value(ExperimentConfig::preset(&name)?).map_err(CliError::internal)?;
            merge(&mut base, v);
            base
        }
        Some(other) => return Err(CliError::validation(vec![format!("preset must be a string, got {other}")])),
        None => v,
    };
    deserialize(full, "experiment")
}

pub fn deserialize<T: DeserializeOwned>(v: Value, what: &str) -> Result<T, CliError> {
    serde_json::from_value(v).map_err(|e| CliError::validation(vec![format!("{what}: {e}")]))
}

/// The experiment named by `--config` and/or `--preset`; the file overrides the preset.
pub fn load_experiment(config: Option<&Path>, preset: Option<&str>) -> Result<ExperimentConfig, CliError> {
    let mut v = match config {
        Some(p) => read_value(p)?,
        None => Value::Object(Map::new()),
    };
    if let (Some(name), Value::Object(m)) = (preset, &mut v) {
        m.entry("preset").or_insert_with(|| Value::String(name.to_string()));
    }
    if config.is_none() && preset.is_none() {
        return Err(CliError::validation(vec!["give --config or --preset".into()]));
    }
    experiment_from_value(v)
}

/// Every problem with `cfg`, or `Ok` when it builds.
pub fn validated(cfg: ExperimentConfig) -> Result<ExperimentConfig, CliError> {
    let errs = cfg.validate();
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::validation(errs))
    }
}
