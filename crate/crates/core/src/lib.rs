//! Unrolled-network MRI reconstruction with memory-efficient training.

pub mod autodiff;
pub mod conv;
pub mod cs;
pub mod data;
pub mod error;
pub mod fft;
pub mod harness;
pub mod nets;
pub mod physics;
pub mod tensor;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
