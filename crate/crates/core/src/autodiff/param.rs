use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Value;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A trainable tensor with its accumulated gradient.
///
/// Clones share the id, so a cloned network maps gradients onto the
/// same slots as the original.
#[derive(Clone, Debug)]
pub struct Parameter {
    id: ParamId,
    value: Value,
    grad: Value,
}

impl Parameter {
    pub fn new(value: impl Into<Value>) -> Self {
        let value = value.into();
        let grad = value.zeros_like();
        Self {
            id: ParamId::fresh(),
            value,
            grad,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn value(&self) -> &Value {
        &self.value
    }

    pub fn grad(&self) -> &Value {
        &self.grad
    }

    pub fn set_value(&mut self, value: Value) -> Result<()> {
        if value.shape() != self.value.shape() || value.is_complex() != self.value.is_complex() {
            return Err(Error::dim(format!(
                "parameter value {:?} cannot replace {:?}",
                value.shape(),
                self.value.shape()
            )));
        }
        self.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self) -> &mut Value {
        &mut self.value
    }

    pub fn zero_grad(&mut self) {
        self.grad = self.value.zeros_like();
    }

    pub fn accumulate_grad(&mut self, g: &Value) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(Error::dim(format!(
                "gradient {:?} does not match parameter {:?}",
                g.shape(),
                self.value.shape()
            )));
        }
        self.grad.add_assign(g)
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}
