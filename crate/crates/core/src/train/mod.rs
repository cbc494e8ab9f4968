//! Training strategies for unrolled networks: end-to-end backprop,
//! gradient checkpointing, invertible backprop (MEL) and greedy module-wise
//! training (GLEAM), the latter optionally spread over worker threads.

mod accounting;
mod adam;
mod config;
mod parallel;
mod report;
mod strategies;

pub use accounting::{analytic_peak, Footprint};
pub use adam::{Adam, AdamConfig};
pub use config::{Strategy, TrainConfig};
pub use report::{Timing, TrainReport};
pub use strategies::{batch_gradients, gleam_step_gradients, mel_checkpoint_positions, StepStats};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::metrics::psnr;
use crate::error::{Error, Result};
use crate::nets::{NetModule, Snapshot, SnapshotEntry, UnrolledNetwork};
use crate::physics::Measurement;
use crate::tensor::{ComplexTensor, RealTensor};

/// One training pair: the acquisition and its fully sampled image.
#[derive(Clone, Debug)]
pub struct Sample {
    pub meas: Measurement,
    pub target: ComplexTensor,
}

impl Sample {
    pub fn image_shape(&self) -> [usize; 2] {
        self.meas.model.image_shape()
    }
}

/// Complex l1 loss: mean modulus of `pred - target`.
pub fn loss_complex_l1(pred: &ComplexTensor, target: &ComplexTensor) -> Result<f64> {
    pred.check_same_shape(target)?;
    let n = pred.len().max(1) as f64;
    Ok(pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).norm()).sum::<f64>() / n)
}

/// Items of mini-batch `step`: consecutive slots of a per-epoch shuffle.
pub fn batch_indices(n_items: usize, batch: usize, step: usize, seed: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let mut perm_epoch = usize::MAX;
    let mut perm: Vec<usize> = Vec::new();
    for j in 0..batch {
        let p = step * batch + j;
        let epoch = p / n_items;
        if epoch != perm_epoch {
            perm = (0..n_items).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            perm.shuffle(&mut rng);
            perm_epoch = epoch;
        }
        out.push(perm[p % n_items]);
    }
    out
}

/// Mean PSNR of the full-depth reconstruction over `samples`.
pub fn mean_psnr(net: &UnrolledNetwork, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for s in samples {
        total += psnr(&s.target, &net.forward_full(&s.meas, net.spec.iterations)?)?;
    }
    Ok(total / samples.len() as f64)
}

/// Network, per-module optimizers and the global step counter.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub net: UnrolledNetwork,
    pub optimizers: Vec<Adam>,
    pub step: usize,
}

const ROLE_ADAM_M: &str = "adam_m";
const ROLE_ADAM_V: &str = "adam_v";

impl TrainState {
    pub fn new(net: UnrolledNetwork, adam: AdamConfig) -> Self {
        let optimizers = net.modules().iter().map(|m| Adam::new(adam, &m.params())).collect();
        Self { net, optimizers, step: 0 }
    }

    /// Parameters plus optimizer moments, step counts in the header.
    pub fn to_snapshot(&self) -> Result<Snapshot> {
        let mut snap = Snapshot::from_network(&self.net)?;
        for (m, opt) in self.optimizers.iter().enumerate() {
            for (role, moments) in [(ROLE_ADAM_M, &opt.m), (ROLE_ADAM_V, &opt.v)] {
                for (layer, data) in moments.iter().enumerate() {
                    snap.entries.push(SnapshotEntry {
                        module: m,
                        layer,
                        role: role.into(),
                        tensor: RealTensor::from_vec(&[data.len()], data.clone())?,
                    });
                }
            }
        }
        snap.meta = serde_json::json!({
            "step": self.step,
            "adam_steps": self.optimizers.iter().map(|o| o.steps).collect::<Vec<_>>(),
            "adam": self.optimizers.first().map(|o| o.config),
        });
        Ok(snap)
    }

    pub fn from_snapshot(snap: &Snapshot) -> Result<Self> {
        let net = snap.to_network()?;
        let adam: AdamConfig = snap
            .meta
            .get("adam")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .unwrap_or_default();
        let mut state = Self::new(net, adam);
        let steps: Vec<u64> = snap
            .meta
            .get("adam_steps")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .unwrap_or_default();
        state.step = snap.meta.get("step").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
        for (m, opt) in state.optimizers.iter_mut().enumerate() {
            opt.steps = steps.get(m).copied().unwrap_or(0);
            for e in snap.entries.iter().filter(|e| e.module == m) {
                let slot = match e.role.as_str() {
                    ROLE_ADAM_M => opt.m.get_mut(e.layer),
                    ROLE_ADAM_V => opt.v.get_mut(e.layer),
                    _ => continue,
                };
                let slot = slot.ok_or_else(|| Error::Format(format!("no optimizer slot {}", e.layer)))?;
                if slot.len() != e.tensor.len() {
                    return Err(Error::Format("optimizer state size mismatch".into()));
                }
                slot.copy_from_slice(e.tensor.data());
            }
        }
        Ok(state)
    }
}

/// Run `cfg.iterations` mini-batches of `cfg.strategy` from `state`,
/// validating on `val` at the configured cadence and at the end.
pub fn train(state: &mut TrainState, data: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    let (report, failure) = train_partial(state, data, val, cfg)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Like [`train`], but a failure after training has started still hands
/// back the report of the steps that completed. `state` then holds the
/// parameters reached so far and `state.step` counts completed steps.
pub fn train_partial(
    state: &mut TrainState,
    data: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<(TrainReport, Option<Error>)> {
    cfg.validate(&state.net.spec)?;
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let spec = state.net.spec.clone();
    let image = data[0].image_shape();
    for (m, opt) in state.optimizers.iter_mut().enumerate() {
        opt.config = AdamConfig {
            lr: cfg.lr_for(m),
            ..cfg.adam
        };
    }
    let mut modules: Vec<NetModule> = state.net.modules();
    let mut report = TrainReport {
        strategy: cfg.strategy,
        workers: cfg.workers,
        start_step: state.step,
        iterations: cfg.iterations,
        losses: Vec::new(),
        peak_activation_elements: 0,
        analytic_peak: analytic_peak(&spec, cfg, image),
        validation_psnr: Vec::new(),
        inversion_fallbacks: 0,
        timing: Timing::default(),
    };

    let bound = spec.invertible.then_some(spec.lipschitz_bound);
    let outcome = if cfg.workers > 1 {
        parallel::run(&mut modules, &mut state.optimizers, data, cfg, state.step, bound, &mut report)
    } else {
        strategies::run_serial(&mut modules, &mut state.optimizers, &spec, data, val, cfg, state.step, &mut report)
    };
    state.net = UnrolledNetwork::from_modules(spec, modules)?;
    let completed = report.losses.iter().map(Vec::len).min().unwrap_or(0);
    state.step += completed;
    if let Err(e) = outcome {
        report.iterations = completed;
        return Ok((report, Some(e)));
    }
    if !val.is_empty() && report.validation_psnr.last().map(|v| v.0) != Some(state.step) {
        report.validation_psnr.push((state.step, mean_psnr(&state.net, val)?));
    }
    Ok((report, None))
}
