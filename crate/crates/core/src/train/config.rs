use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::nets::{NetKind, NetworkSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    E2eBp,
    Checkpointing,
    Mel,
    Gleam,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::E2eBp, Strategy::Checkpointing, Strategy::Mel, Strategy::Gleam];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::E2eBp => "e2e_bp",
            Strategy::Checkpointing => "checkpointing",
            Strategy::Mel => "mel",
            Strategy::Gleam => "gleam",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown strategy '{s}'")))
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// P-GLEAM workers `D`; values above one are only valid for GLEAM.
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "one")]
    pub batch_size: usize,
    /// Mini-batches to run.
    pub iterations: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Optional per-module learning rates for GLEAM.
    #[serde(default)]
    pub module_lr: Option<Vec<f64>>,
    /// Stored checkpoints. Checkpointing defaults to one per iteration, MEL
    /// to none.
    #[serde(default)]
    pub n_cp: Option<usize>,
    /// Validation PSNR every this many steps; zero records only the end.
    #[serde(default)]
    pub eval_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(strategy: Strategy, iterations: usize, seed: u64) -> Self {
        Self {
            strategy,
            workers: 1,
            batch_size: 1,
            iterations,
            adam: AdamConfig::default(),
            module_lr: None,
            n_cp: None,
            eval_every: 0,
            seed,
        }
    }

    /// Checkpoints actually used by this strategy on `net`.
    pub fn checkpoints(&self, net: &NetworkSpec) -> usize {
        match self.strategy {
            Strategy::Checkpointing => self.n_cp.unwrap_or(net.iterations),
            Strategy::Mel => self.n_cp.unwrap_or(0).min(net.iterations),
            _ => 0,
        }
    }

    pub fn validate(&self, net: &NetworkSpec) -> Result<()> {
        net.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        if self.workers > 1 {
            if self.strategy != Strategy::Gleam {
                return Err(Error::config("parallel workers are only supported for gleam"));
            }
            if net.modules % self.workers != 0 {
                return Err(Error::config(format!(
                    "D = {} workers must divide M = {} modules",
                    self.workers, net.modules
                )));
            }
        }
        if !(self.adam.lr > 0.0) || !(self.adam.eps > 0.0) {
            return Err(Error::config("learning rate and eps must be positive"));
        }
        if let Some(lrs) = &self.module_lr {
            if lrs.len() != net.modules || lrs.iter().any(|&l| !(l > 0.0)) {
                return Err(Error::config(format!(
                    "module_lr needs {} positive entries",
                    net.modules
                )));
            }
        }
        match self.strategy {
            Strategy::Checkpointing => {
                let n_cp = self.checkpoints(net);
                if n_cp == 0 || n_cp > net.iterations || net.iterations % n_cp != 0 {
                    return Err(Error::config(format!(
                        "checkpointing needs N_cp dividing N = {}, got {n_cp}",
                        net.iterations
                    )));
                }
            }
            Strategy::Mel => {
                if net.kind != NetKind::Modl || !net.invertible {
                    return Err(Error::config(
                        "mel needs an invertible MoDL network (kind = modl, invertible = true)",
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Learning rate for module `m`.
    pub fn lr_for(&self, m: usize) -> f64 {
        self.module_lr.as_ref().map_or(self.adam.lr, |l| l[m])
    }
}
