//! Config file loading with dotted-path overrides.
//!
//! Experiments are described by a TOML file mirroring [`TrainConfig`];
//! `--set a.b.c=value` flags rewrite individual keys before deserialization.

use std::path::Path;

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::pipeline::TrainConfig;

/// Parse `key=value` override strings.
pub fn parse_override(spec: &str) -> Result<(String, String)> {
    match spec.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::Config(format!("override '{spec}' is not of the form key=value"))),
    }
}

fn parse_toml_scalar(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}

/// Set a dotted path inside a TOML document, creating tables as needed.
pub fn set_path(doc: &mut toml::Value, path: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{part}' in '{path}' is not a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("parent of '{path}' is not a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parse_toml_scalar(raw));
    Ok(())
}

fn load_document(path: &Path, overrides: &[String]) -> Result<toml::Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut doc: toml::Value = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for spec in overrides {
        let (key, value) = parse_override(spec)?;
        set_path(&mut doc, &key, &value)?;
    }
    Ok(doc)
}

/// Load a training config, applying `key=value` overrides first.
pub fn load_train_config(path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let doc = load_document(path, overrides)?;
    let cfg: TrainConfig = doc
        .try_into()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Load a dataset spec: either a bare spec file or the `[dataset]` table of
/// a full training config.
pub fn load_dataset_spec(path: &Path, overrides: &[String]) -> Result<DatasetSpec> {
    let doc = load_document(path, overrides)?;
    if let Some(table) = doc.get("dataset") {
        let spec: DatasetSpec = table
            .clone()
            .try_into()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        return Ok(spec);
    }
    let spec: DatasetSpec = doc
        .try_into()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}
