//! Reverse-mode automatic differentiation with activation accounting.
//!
//! A [`Tape`] records primitive operations as they execute. Each operation
//! declares which tensors its backward rule needs; those count toward the
//! shared [`ActivationMeter`] until the reverse pass consumes the node.
//!
//! Saved-activation schedule, in `f64` words (complex entries count twice):
//!
//! | op                                   | saved                                  |
//! |--------------------------------------|----------------------------------------|
//! | add, sub, scale, sum_leading         | nothing                                |
//! | fft2, ifft2, mask, to/from_channels  | nothing (linear, constant operators)   |
//! | mul                                  | each operand whose partner needs grad  |
//! | conv2d                               | input (kernel and bias are parameters) |
//! | relu                                 | sign mask, one word per entry          |
//! | l1_complex                           | residual direction, two words per entry|
//! | sq_norm                              | input                                  |
//! | cg_solve                             | nothing (linear in its input)          |
//! | checkpoint                           | copies of the segment inputs           |
//!
//! Leaves (constants, inputs, parameters) are resident regardless of the
//! graph and never count, with the exception of checkpoint copies.

pub mod gradcheck;
mod meter;
mod param;
mod tape;

pub use meter::ActivationMeter;
pub use param::{ParamId, Parameter};
pub use tape::{Gradients, Segment, Tape, Var};
pub(crate) use tape::apply_mask;

#[cfg(test)]
mod tests;
