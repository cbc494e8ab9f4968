use std::sync::Arc;

use super::SensingModel;
use crate::error::Result;
use crate::tensor::ComplexTensor;

/// One acquisition: the operator, its k-space data and the zero-filled
/// image `A^H y`, which also serves as the starting iterate.
#[derive(Clone, Debug)]
pub struct Measurement {
    pub model: Arc<SensingModel>,
    pub kspace: ComplexTensor,
    pub aty: ComplexTensor,
}

impl Measurement {
    pub fn new(model: Arc<SensingModel>, kspace: ComplexTensor) -> Result<Self> {
        let aty = model.adjoint(&kspace)?;
        Ok(Self { model, kspace, aty })
    }

    /// Noise-free acquisition of `x`.
    pub fn simulate(model: Arc<SensingModel>, x: &ComplexTensor) -> Result<Self> {
        let kspace = model.forward(x)?;
        Self::new(model, kspace)
    }
}
