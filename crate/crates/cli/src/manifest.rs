use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_FORMAT: &str = "drqr-manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Command-specific settings that are not part of the config file.
    pub arguments: BTreeMap<String, serde_json::Value>,
    /// Path -> sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects artifacts while a command runs.
pub struct Recorder {
    manifest: Manifest,
    path: PathBuf,
}

impl Recorder {
    pub fn new(command: &str, config: &ExperimentConfig, path: PathBuf) -> Self {
        Recorder {
            manifest: Manifest {
                format: MANIFEST_FORMAT.into(),
                command: command.into(),
                seed: config.seed,
                config: config.clone(),
                arguments: BTreeMap::new(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                summary: serde_json::Value::Null,
            },
            path,
        }
    }

    pub fn arg(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("argument serializes");
        self.manifest.arguments.insert(key.into(), v);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.manifest
            .inputs
            .insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.manifest
            .outputs
            .insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn summary(&mut self, value: serde_json::Value) {
        self.manifest.summary = value;
    }

    pub fn finish(self) -> Result<PathBuf> {
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&self.path, json + "\n")
            .with_context(|| format!("writing manifest {}", self.path.display()))?;
        Ok(self.path)
    }
}

/// `<output>.manifest.json` next to the primary output.
pub fn default_path(primary: &Path) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
