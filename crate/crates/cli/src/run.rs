//! Per-run bookkeeping: the output lock and the run manifest.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use ace_core::AceError;
use serde::Serialize;
use serde_json::Value;

/// Exclusive claim on an output location, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    /// Locks directory `dir` (created if missing).
    pub fn dir(dir: &Path) -> Result<Self, AceError> {
        fs::create_dir_all(dir)?;
        Self::acquire(dir.join(".ace.lock"))
    }

    /// Locks the single output file `file`.
    pub fn file(file: &Path) -> Result<Self, AceError> {
        if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut name = file.as_os_str().to_owned();
        name.push(".lock");
        Self::acquire(PathBuf::from(name))
    }

    fn acquire(path: PathBuf) -> Result<Self, AceError> {
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(AceError::ConfigError(format!(
                "{} exists: another run is writing here (remove it if that run is gone)",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Everything needed to repeat a run: resolved config, seed, inputs and
/// their content hashes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: &'static str,
    pub seed: Option<u64>,
    pub config: Value,
    pub config_sources: BTreeMap<String, &'static str>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub vocab_hash: Option<String>,
    pub dataset_hash: Option<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: None,
            config: Value::Null,
            config_sources: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            vocab_hash: None,
            dataset_hash: None,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> &mut Self {
        self.inputs.insert(name.to_string(), path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn write(&self, path: &Path) -> Result<(), AceError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }
}
