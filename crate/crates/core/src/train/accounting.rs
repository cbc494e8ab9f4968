//! Closed-form peak activation counts for each strategy, in `f64` words.
//!
//! With `P` the words saved by one unrolled iteration, `L` by the loss and
//! `c` by one stored image, per batch item:
//!
//! | strategy      | peak                                     |
//! |---------------|------------------------------------------|
//! | e2e           | `b (N P + L)`                            |
//! | checkpointing | `b N_cp c + max(b L, (N / N_cp) P)`      |
//! | mel           | `b (1 + |Q|) c + max(b L, P)`            |
//! | gleam         | `b ((N / M) P + L)`, times `D` workers   |
//!
//! Checkpointed segments and MEL's reverse sweep run one item at a time,
//! hence the missing factor `b` on their `P`. MEL stores the final output
//! plus `|Q|` checkpoints.

use super::config::{Strategy, TrainConfig};
use crate::nets::NetworkSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    /// Saved words of one unrolled iteration.
    pub iteration: usize,
    /// Saved words of the loss.
    pub loss: usize,
    /// Words of one stored complex image.
    pub image: usize,
}

impl Footprint {
    pub fn new(spec: &NetworkSpec, image: [usize; 2]) -> Self {
        let hw = image[0] * image[1];
        let (blocks, convs) = spec.kind.layout();
        // Per residual block: the first conv saves its 2-channel input; each
        // later conv saves its N_f-channel input and each relu its mask.
        let per_block = 2 + 2 * (convs - 1) * spec.features;
        Self {
            iteration: blocks * per_block * hw,
            loss: 2 * hw,
            image: 2 * hw,
        }
    }
}

pub fn analytic_peak(spec: &NetworkSpec, cfg: &TrainConfig, image: [usize; 2]) -> usize {
    let f = Footprint::new(spec, image);
    let b = cfg.batch_size;
    let n = spec.iterations;
    match cfg.strategy {
        Strategy::E2eBp => b * (n * f.iteration + f.loss),
        Strategy::Checkpointing => {
            let n_cp = cfg.checkpoints(spec);
            b * n_cp * f.image + (b * f.loss).max((n / n_cp) * f.iteration)
        }
        Strategy::Mel => {
            let q = cfg.checkpoints(spec);
            b * (1 + q) * f.image + (b * f.loss).max(f.iteration)
        }
        Strategy::Gleam => cfg.workers * b * (spec.iterations_per_module() * f.iteration + f.loss),
    }
}
