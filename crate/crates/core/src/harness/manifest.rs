use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentConfig;
use crate::error::Result;

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub dataset: u64,
    pub network: u64,
    pub train: u64,
}

/// Provenance of one command invocation. `outputs` maps every
/// deterministic output file to its SHA-256; wall-clock files are listed
/// in `unhashed`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub code_version: String,
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub unhashed: Vec<String>,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            config_hash: cfg.hash(),
            seeds: Seeds {
                dataset: cfg.dataset.seed,
                network: cfg.network.seed,
                train: cfg.train.seed,
            },
            code_version: CODE_VERSION.into(),
            outputs: BTreeMap::new(),
            unhashed: Vec::new(),
        }
    }

    /// Record `path` (relative to `dir`) with its hash.
    pub fn add(&mut self, dir: &Path, name: &str) -> Result<()> {
        self.outputs.insert(name.into(), file_sha256(&dir.join(name))?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
