use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParameters;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "drqr-seq2seq";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Vocabulary, parameters and whatever training configuration the caller
/// wants to keep next to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub config: serde_json::Value,
    pub vocab: Vocabulary,
    pub params: ModelParameters,
}

impl Checkpoint {
    pub fn new(
        vocab: Vocabulary,
        params: ModelParameters,
        config: serde_json::Value,
    ) -> Result<Self> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config,
            vocab,
            params,
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format `{}`",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.params.validate()?;
        let v = self.params.dims().vocab_size;
        if v != self.vocab.len() {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} tokens but the parameters expect {v}",
                self.vocab.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        ck.validate()?;
        Ok(ck)
    }
}
