//! Layered configuration: built-in defaults, then a TOML file, then flags.

use std::collections::BTreeMap;
use std::path::Path;

use ace_core::AceError;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// A resolved configuration plus where each top-level key came from.
#[derive(Debug, Clone)]
pub struct Resolved<T> {
    pub value: T,
    pub json: Value,
    pub sources: BTreeMap<String, &'static str>,
}

/// Flag overrides, keyed by config field name. `None` means "not given".
#[derive(Debug, Default)]
pub struct Overrides(Vec<(&'static str, Value)>);

impl Overrides {
    pub fn set<V: Serialize>(&mut self, key: &'static str, v: Option<V>) -> &mut Self {
        if let Some(v) = v {
            self.0
                .push((key, serde_json::to_value(v).expect("override serializes")));
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn resolve<T>(file: Option<&Path>, overrides: &Overrides) -> Result<Resolved<T>, AceError>
where
    T: Serialize + DeserializeOwned + Default,
{
    let Value::Object(mut merged) = serde_json::to_value(T::default())? else {
        unreachable!("config types serialize to objects")
    };
    let mut sources: BTreeMap<String, &'static str> = merged.keys().map(|k| (k.clone(), "default")).collect();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| AceError::IngestError {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let table: Map<String, Value> =
            toml::from_str(&text).map_err(|e| AceError::ConfigError(format!("{}: {e}", path.display())))?;
        for (k, v) in table {
            sources.insert(k.clone(), "file");
            merged.insert(k, v);
        }
    }
    for (k, v) in &overrides.0 {
        sources.insert(k.to_string(), "cli");
        merged.insert(k.to_string(), v.clone());
    }
    let json = Value::Object(merged);
    let value: T = serde_json::from_value(json.clone()).map_err(|e| AceError::ConfigError(e.to_string()))?;
    // re-serialize so the recorded config is the normalized one
    let json = serde_json::to_value(&value)?;
    Ok(Resolved { value, json, sources })
}
