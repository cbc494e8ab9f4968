use serde::{Deserialize, Serialize};

use super::config::Strategy;

/// Wall-clock split of a run, in seconds. When forward and backward
/// overlap (P-GLEAM) only `total` is meaningful and `merged` is set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub forward: f64,
    pub backward: f64,
    /// Part of `backward` spent inverting layers (MEL).
    pub inversion: f64,
    pub total: f64,
    pub merged: bool,
}

impl Timing {
    pub fn per_iteration(&self, iterations: usize) -> f64 {
        self.total / iterations.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub strategy: Strategy,
    pub workers: usize,
    /// Global step index of the first iteration in this run.
    pub start_step: usize,
    pub iterations: usize,
    /// Training loss per iteration; one trace per module for GLEAM, a
    /// single trace otherwise.
    pub losses: Vec<Vec<f64>>,
    pub peak_activation_elements: usize,
    pub analytic_peak: usize,
    /// `(step, mean validation PSNR)` pairs.
    pub validation_psnr: Vec<(usize, f64)>,
    /// Inversions that failed and fell back to a checkpoint (MEL).
    pub inversion_fallbacks: usize,
    /// Excluded from the serialized report so reruns compare equal.
    #[serde(skip)]
    pub timing: Timing,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().and_then(|t| t.last().copied())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}
