//! JSON experiment configs with dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use critic_pi2::trainer::ExperimentConfig;
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Parse(String),
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("malformed override `{0}`, expected key=value")]
    BadOverride(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Loads `path` (empty or absent means all defaults), applies the overrides
/// in order and validates the result.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
            path: p.to_path_buf(),
            source,
        })?,
        None => String::new(),
    };
    parse_config_str(&text, overrides)
}

pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut user = if text.trim().is_empty() {
        Value::Object(Map::new())
    } else {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
    };
    if !user.is_object() {
        return Err(ConfigError::Parse("top level must be an object".into()));
    }
    for o in overrides {
        apply_override(&mut user, o)?;
    }
    let mut merged = serde_json::to_value(ExperimentConfig::default()).expect("defaults serialize");
    let mut unknown = Vec::new();
    collect_unknown(&merged, &user, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys(unknown));
    }
    merge(&mut merged, user);
    let cfg: ExperimentConfig = serde_json::from_value(merged).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    cfg.validate().map_err(ConfigError::Invalid)?;
    Ok(cfg)
}

/// `a.b.c=value`; the value is read as JSON when possible, otherwise as a string.
fn apply_override(root: &mut Value, arg: &str) -> Result<(), ConfigError> {
    let (key, raw) = arg.split_once('=').ok_or_else(|| ConfigError::BadOverride(arg.into()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::BadOverride(arg.into()));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| ConfigError::BadOverride(arg.into()))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node.as_object_mut().ok_or_else(|| ConfigError::BadOverride(arg.into()))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn collect_unknown(reference: &Value, user: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Some(known), Some(given)) = (reference.as_object(), user.as_object()) else {
        return;
    };
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match known.get(k) {
            None => out.push(path),
            Some(r) if r.is_object() => collect_unknown(r, v, &path, out),
            Some(_) => {}
        }
    }
}

fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, u) => *b = u,
    }
}

/// Leaf-level differences between two configs as `(path, left, right)`.
pub fn config_diff(a: &ExperimentConfig, b: &ExperimentConfig) -> Vec<(String, Value, Value)> {
    let mut out = Vec::new();
    diff_values(
        &serde_json::to_value(a).expect("config serializes"),
        &serde_json::to_value(b).expect("config serializes"),
        "",
        &mut out,
    );
    out
}

fn diff_values(a: &Value, b: &Value, prefix: &str, out: &mut Vec<(String, Value, Value)>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                diff_values(x.get(k).unwrap_or(&Value::Null), y.get(k).unwrap_or(&Value::Null), &path, out);
            }
        }
        _ if a != b => out.push((prefix.to_string(), a.clone(), b.clone())),
        _ => {}
    }
}
