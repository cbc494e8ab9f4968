//! Unrolled PGD and MoDL networks, their invertible variants, module
//! splitting for greedy training, and parameter snapshots.

mod layers;
mod network;
mod snapshot;

pub use layers::{ConvLayer, InversionSettings, ProximalBlock, ResidualBlock};
pub use network::{
    invert_iteration, iteration_var, NetKind, NetModule, NetworkSpec, UnrolledNetwork, INIT_STD,
};
pub use snapshot::{Snapshot, SnapshotEntry, ROLE_PARAM};
