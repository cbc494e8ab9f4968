//! Accelerated-MRI measurement model `A = Ω F S`, data-consistency steps,
//! the regularized CG solve and its closed-form inverse, plus the mask and
//! coil-map generators used to build synthetic problems.

pub mod cg;
mod coils;
mod mask;
mod measurement;
mod sensing;

pub use cg::{cg_inverse, modl_solve, CgSolution};
pub use coils::make_coil_maps;
pub use mask::{achieved_acceleration, fftshift, make_mask, MaskKind, MaskSpec};
pub use measurement::Measurement;
pub use sensing::{dc_step, SensingModel};

/// Regularization presets for the MoDL solve at R = 4 and R = 16.
pub const MU_PRESET_R4: f64 = 4.0;
pub const MU_PRESET_R16: f64 = 0.05;

/// Default PGD step size.
pub const DEFAULT_STEP_SIZE: f64 = 0.5;

/// CG iterations per MoDL data-consistency block.
pub const DEFAULT_CG_ITERS: usize = 10;
