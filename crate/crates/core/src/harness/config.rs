use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cs::CsConfig;
use crate::data::{DatasetSpec, SensingSpec};
use crate::error::{Error, Result};
use crate::nets::NetworkSpec;
use crate::train::TrainConfig;

/// Everything one experiment needs. Every section carries an explicit
/// seed; a config without one does not parse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub sensing: SensingSpec,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub cs: Option<CsConfig>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.sensing.validate()?;
        self.train.validate(&self.network)?;
        if let Some(cs) = &self.cs {
            cs.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let located = Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&located).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output_dir.join("data")
    }

    pub fn run_dir(&self) -> PathBuf {
        let t = &self.train;
        let name = if t.workers > 1 {
            format!("{}_d{}", t.strategy.name(), t.workers)
        } else {
            t.strategy.name().to_string()
        };
        self.output_dir.join("runs").join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::NetKind;
    use crate::train::Strategy;

    fn sample() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec::desk(1),
            sensing: SensingSpec::preset(4.0),
            network: NetworkSpec::new(NetKind::Pgd, 4, 4, 8, 2),
            train: TrainConfig::new(Strategy::Gleam, 10, 3),
            cs: None,
            output_dir: "out".into(),
        }
    }

    #[test]
    fn json_round_trip() {
        let cfg = sample();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn missing_seed_is_a_config_error() {
        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        for section in ["dataset", "network", "train"] {
            let mut w = v.clone();
            w[section].as_object_mut().unwrap().remove("seed");
            let err = ExperimentConfig::from_json(&w.to_string()).unwrap_err();
            assert!(matches!(err, Error::Config(ref m) if m.contains("seed")), "{section}: {err}");
        }
        v["network"]["modules"] = 3.into();
        assert!(matches!(ExperimentConfig::from_json(&v.to_string()), Err(Error::Config(_))));
    }

    #[test]
    fn worker_count_must_divide_modules() {
        let mut cfg = sample();
        cfg.train.workers = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = sample();
        let mut b = sample();
        assert_eq!(a.hash(), b.hash());
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.train.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
