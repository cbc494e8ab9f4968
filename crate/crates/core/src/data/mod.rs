//! Synthetic phantoms, retrospective undersampling, metrics and the
//! stage-wise inference sweep.

mod dataset;
pub mod metrics;
mod phantom;
mod sweep;

pub use dataset::{Dataset, DatasetSpec, SensingSpec, Split, DESK_NOISE};
pub use metrics::{nrmse, psnr, ssim, ssim_magnitude, MetricSet, Summary};
pub use phantom::make_phantom;
pub use sweep::{evaluate, inference_sweep, SweepRow};
