use num_complex::Complex64;
use std::collections::{BTreeMap, HashMap};
use std::hash::{Hash, Hasher};
use std::rc::Rc;
use std::sync::Arc;

use super::meter::ActivationMeter;
use super::param::{ParamId, Parameter};
use crate::conv;
use crate::error::{Error, Result};
use crate::fft;
use crate::physics::{cg, SensingModel};
use crate::tensor::{ComplexTensor, RealTensor, Value};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A pure sub-computation whose activations are recomputed during the
/// reverse pass instead of being stored.
pub type Segment<'a> = Rc<dyn Fn(&mut Tape<'a>, &[Var]) -> Result<Var> + 'a>;

enum Op<'a> {
    Leaf,
    Add,
    Sub,
    Scale(f64),
    Mul,
    SumLeading,
    Fft2,
    Ifft2,
    Mask(Arc<RealTensor>),
    ToChannels,
    FromChannels,
    Conv2d,
    Relu,
    L1Complex(ComplexTensor),
    SumReal,
    SqNorm,
    CgSolve {
        model: Arc<SensingModel>,
        iters: usize,
    },
    Checkpoint {
        segment: Segment<'a>,
        inputs: Vec<Value>,
        digest: u64,
    },
}

impl Op<'_> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Scale(_) => "scale",
            Op::Mul => "mul",
            Op::SumLeading => "sum_leading",
            Op::Fft2 => "fft2",
            Op::Ifft2 => "ifft2",
            Op::Mask(_) => "mask",
            Op::ToChannels => "to_channels",
            Op::FromChannels => "from_channels",
            Op::Conv2d => "conv2d",
            Op::Relu => "relu",
            Op::L1Complex(_) => "l1_complex",
            Op::SumReal => "sum_real",
            Op::SqNorm => "sq_norm",
            Op::CgSolve { .. } => "cg_solve",
            Op::Checkpoint { .. } => "checkpoint",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Computed,
    Constant,
    Input,
    Param(ParamId),
}

struct Node<'a> {
    value: Option<Value>,
    op: Op<'a>,
    parents: Vec<usize>,
    kind: Kind,
    requires_grad: bool,
    saved: usize,
}

/// Gradients produced by a reverse pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, Value>,
    inputs: HashMap<usize, Value>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Value> {
        self.params.get(&id)
    }

    /// Gradient with respect to a leaf created by [`Tape::input`].
    pub fn wrt(&self, var: Var) -> Option<&Value> {
        self.inputs.get(&var.0)
    }

    pub fn params(&self) -> impl Iterator<Item = (&ParamId, &Value)> {
        self.params.iter()
    }

    fn add_param(&mut self, id: ParamId, g: Value) -> Result<()> {
        match self.params.get_mut(&id) {
            Some(acc) => acc.add_assign(&g),
            None => {
                self.params.insert(id, g);
                Ok(())
            }
        }
    }

    /// Fold another pass's parameter gradients into this one.
    pub fn merge(&mut self, other: Gradients) -> Result<()> {
        for (id, g) in other.params {
            self.add_param(id, g)?;
        }
        Ok(())
    }

    /// Add every parameter gradient into the matching [`Parameter`].
    pub fn accumulate_into<'p>(&self, params: impl IntoIterator<Item = &'p mut Parameter>) -> Result<()> {
        for p in params {
            if let Some(g) = self.params.get(&p.id()) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

/// Records differentiable operations and runs the reverse pass.
///
/// A tape is single-threaded; each training worker owns its own.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    meter: ActivationMeter,
    recording: bool,
    spent: bool,
}

impl<'a> Tape<'a> {
    /// A recording tape with its own meter.
    pub fn new() -> Self {
        Self::with_meter(ActivationMeter::new())
    }

    /// A recording tape that reports into a shared meter.
    pub fn with_meter(meter: ActivationMeter) -> Self {
        Self {
            nodes: Vec::new(),
            meter,
            recording: true,
            spent: false,
        }
    }

    /// A tape that evaluates values only: nothing requires grad and nothing
    /// is saved.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            meter: ActivationMeter::new(),
            recording: false,
            spent: false,
        }
    }

    pub fn meter(&self) -> &ActivationMeter {
        &self.meter
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Value {
        self.nodes[v.0]
            .value
            .as_ref()
            .expect("value of a node already consumed by the reverse pass")
    }

    pub fn real(&self, v: Var) -> Result<&RealTensor> {
        self.value(v).as_real()
    }

    pub fn complex(&self, v: Var) -> Result<&ComplexTensor> {
        self.value(v).as_complex()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn is_leaf(&self, index: usize) -> bool {
        self.nodes[index].kind != Kind::Computed
    }

    fn push_leaf(&mut self, value: Value, kind: Kind) -> Var {
        let requires_grad = self.recording && kind != Kind::Constant;
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Leaf,
            parents: Vec::new(),
            kind,
            requires_grad,
            saved: 0,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: impl Into<Value>) -> Var {
        self.push_leaf(value.into(), Kind::Constant)
    }

    /// A leaf whose gradient is reported in [`Gradients::wrt`].
    pub fn input(&mut self, value: impl Into<Value>) -> Var {
        self.push_leaf(value.into(), Kind::Input)
    }

    pub fn param(&mut self, p: &Parameter) -> Var {
        self.push_leaf(p.value().clone(), Kind::Param(p.id()))
    }

    /// Append a computed node. `saved` is the schedule's word count, held on
    /// the meter until the reverse pass consumes the node.
    fn push_op(&mut self, op: Op<'a>, parents: Vec<usize>, value: Value, saved: usize) -> Var {
        let requires_grad = self.recording && parents.iter().any(|&p| self.nodes[p].requires_grad);
        let saved = if self.recording { saved } else { 0 };
        self.meter.hold(saved);
        self.nodes.push(Node {
            value: Some(value),
            op,
            parents,
            kind: Kind::Computed,
            requires_grad,
            saved,
        });
        Var(self.nodes.len() - 1)
    }

    /// Words of `var` if it is a computed node, zero for leaves.
    fn activation_words(&self, v: Var) -> usize {
        if self.is_leaf(v.0) {
            0
        } else {
            self.value(v).scalar_elements()
        }
    }

    // ---- primitive operations -------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = match (self.value(a), self.value(b)) {
            (Value::Real(x), Value::Real(y)) => Value::Real(x.add(y)?),
            (Value::Complex(x), Value::Complex(y)) => Value::Complex(x.add(y)?),
            _ => return Err(Error::dim("add: operands must both be real or both complex")),
        };
        Ok(self.push_op(Op::Add, vec![a.0, b.0], value, 0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = match (self.value(a), self.value(b)) {
            (Value::Real(x), Value::Real(y)) => Value::Real(x.sub(y)?),
            (Value::Complex(x), Value::Complex(y)) => Value::Complex(x.sub(y)?),
            _ => return Err(Error::dim("sub: operands must both be real or both complex")),
        };
        Ok(self.push_op(Op::Sub, vec![a.0, b.0], value, 0))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = match self.value(a) {
            Value::Real(x) => Value::Real(x.scale(s)),
            Value::Complex(x) => Value::Complex(x.scale(s)),
        };
        Ok(self.push_op(Op::Scale(s), vec![a.0], value, 0))
    }

    /// Complex elementwise product. When shapes differ, the operand with
    /// fewer axes must match the trailing axes of the other and is repeated
    /// over the leading ones.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = broadcast_mul(self.complex(a)?, self.complex(b)?)?;
        let mut saved = 0;
        if self.requires_grad(a) {
            saved += self.activation_words(b);
        }
        if self.requires_grad(b) {
            saved += self.activation_words(a);
        }
        Ok(self.push_op(Op::Mul, vec![a.0, b.0], Value::Complex(value), saved))
    }

    /// Sum over the leading axis.
    pub fn sum_leading(&mut self, a: Var) -> Result<Var> {
        let value = match self.value(a) {
            Value::Real(x) => Value::Real(sum_leading(x)?),
            Value::Complex(x) => Value::Complex(sum_leading(x)?),
        };
        Ok(self.push_op(Op::SumLeading, vec![a.0], value, 0))
    }

    pub fn fft2(&mut self, a: Var) -> Result<Var> {
        let value = fft::fft2(self.complex(a)?)?;
        Ok(self.push_op(Op::Fft2, vec![a.0], Value::Complex(value), 0))
    }

    pub fn ifft2(&mut self, a: Var) -> Result<Var> {
        let value = fft::ifft2(self.complex(a)?)?;
        Ok(self.push_op(Op::Ifft2, vec![a.0], Value::Complex(value), 0))
    }

    /// Multiply by a constant real mask over the trailing axes.
    pub fn mask(&mut self, a: Var, mask: Arc<RealTensor>) -> Result<Var> {
        let value = apply_mask(self.complex(a)?, &mask)?;
        Ok(self.push_op(Op::Mask(mask), vec![a.0], Value::Complex(value), 0))
    }

    /// Complex `(H, W)` image to its real `(2, H, W)` channel view.
    pub fn to_channels(&mut self, a: Var) -> Result<Var> {
        let value = to_channels(self.complex(a)?)?;
        Ok(self.push_op(Op::ToChannels, vec![a.0], Value::Real(value), 0))
    }

    /// Real `(2, H, W)` channel view back to a complex `(H, W)` image.
    pub fn from_channels(&mut self, a: Var) -> Result<Var> {
        let value = from_channels(self.real(a)?)?;
        Ok(self.push_op(Op::FromChannels, vec![a.0], Value::Complex(value), 0))
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let b = match bias {
            Some(b) => Some(self.real(b)?),
            None => None,
        };
        let value = conv::conv2d_forward(self.real(x)?, self.real(weight)?, b)?;
        let kernel_needs_input =
            self.requires_grad(weight) || bias.map_or(false, |b| self.requires_grad(b));
        let saved = if kernel_needs_input {
            self.activation_words(x)
        } else {
            0
        };
        let mut parents = vec![x.0, weight.0];
        parents.extend(bias.map(|b| b.0));
        Ok(self.push_op(Op::Conv2d, parents, Value::Real(value), saved))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let input = self.real(x)?;
        let value = input.map(|v| v.max(0.0));
        let saved = if self.requires_grad(x) { input.len() } else { 0 };
        Ok(self.push_op(Op::Relu, vec![x.0], Value::Real(value), saved))
    }

    /// Mean modulus of the complex residual `pred - target`.
    pub fn l1_complex(&mut self, pred: Var, target: &ComplexTensor) -> Result<Var> {
        let p = self.complex(pred)?;
        p.check_same_shape(target)?;
        let n = p.len().max(1) as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).norm())
            .sum();
        let saved = if self.requires_grad(pred) { 2 * p.len() } else { 0 };
        Ok(self.push_op(
            Op::L1Complex(target.clone()),
            vec![pred.0],
            Value::Real(RealTensor::scalar(total / n)),
            saved,
        ))
    }

    /// `Re(sum(x))` for complex input, `sum(x)` for real.
    pub fn sum_real(&mut self, x: Var) -> Result<Var> {
        let s = match self.value(x) {
            Value::Real(t) => t.data().iter().sum(),
            Value::Complex(t) => t.data().iter().map(|c| c.re).sum(),
        };
        Ok(self.push_op(Op::SumReal, vec![x.0], Value::Real(RealTensor::scalar(s)), 0))
    }

    /// Squared Euclidean norm of the real-pair view.
    pub fn sq_norm(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).norm_sqr();
        let saved = if self.requires_grad(x) {
            self.activation_words(x)
        } else {
            0
        };
        Ok(self.push_op(Op::SqNorm, vec![x.0], Value::Real(RealTensor::scalar(s)), saved))
    }

    /// Solve `(A^H A + mu I) x = aty + mu z` by `iters` CG steps started at
    /// `z`. The reverse pass treats the solve as exact and applies the
    /// same CG budget to the adjoint system.
    pub fn cg_solve(
        &mut self,
        z: Var,
        model: Arc<SensingModel>,
        aty: &ComplexTensor,
        iters: usize,
    ) -> Result<Var> {
        let zt = self.complex(z)?;
        let value = cg::modl_solve(&model, aty, zt, iters)?.x;
        Ok(self.push_op(Op::CgSolve { model, iters }, vec![z.0], Value::Complex(value), 0))
    }

    /// Run `segment` on `inputs`, storing only copies of the inputs. The
    /// reverse pass re-runs the segment on a nested recording tape.
    pub fn checkpoint(&mut self, inputs: &[Var], segment: Segment<'a>) -> Result<Var> {
        let input_values: Vec<Value> = inputs.iter().map(|&v| self.value(v).clone()).collect();
        let mut inner = Tape::no_grad();
        let vars: Vec<Var> = input_values
            .iter()
            .map(|v| inner.constant(v.clone()))
            .collect();
        let out = segment(&mut inner, &vars)?;
        let value = inner.value(out).clone();
        let digest = digest(&value);
        if !self.recording {
            return Ok(self.push_op(Op::Leaf, Vec::new(), value, 0));
        }
        let saved = input_values.iter().map(Value::scalar_elements).sum();
        let out = self.push_op(
            Op::Checkpoint {
                segment,
                inputs: input_values,
                digest,
            },
            inputs.iter().map(|v| v.0).collect(),
            value,
            saved,
        );
        // The segment may read parameters the tape cannot see.
        self.nodes[out.0].requires_grad = true;
        Ok(out)
    }

    // ---- reverse pass ---------------------------------------------------

    /// Reverse pass from a real scalar root.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.spent {
            return Err(Error::Contract("backward already ran on this tape".into()));
        }
        let value = self.value(root);
        let is_scalar = matches!(value, Value::Real(t) if t.len() == 1);
        if !is_scalar {
            return Err(Error::Contract(format!(
                "backward needs a real scalar root, got {} tensor of shape {:?}",
                if value.is_complex() { "complex" } else { "real" },
                value.shape()
            )));
        }
        let seed = Value::Real(RealTensor::full(value.shape(), 1.0));
        self.backward_with_seed(root, seed)
    }

    /// Reverse pass seeded with an arbitrary cotangent for `root`.
    pub fn backward_with_seed(&mut self, root: Var, seed: Value) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::Contract("backward on a no-grad tape".into()));
        }
        if self.spent {
            return Err(Error::Contract("backward already ran on this tape".into()));
        }
        if seed.shape() != self.value(root).shape() || seed.is_complex() != self.value(root).is_complex() {
            return Err(Error::dim(format!(
                "seed {:?} does not match root {:?}",
                seed.shape(),
                self.value(root).shape()
            )));
        }
        self.spent = true;

        // Nodes past the root cannot contribute; release them first.
        for i in (root.0 + 1..self.nodes.len()).rev() {
            self.release_node(i);
        }

        let mut grads: Vec<Option<Value>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        let mut out = Gradients::default();

        for i in (0..=root.0).rev() {
            if let Some(g) = grads[i].take() {
                match self.nodes[i].kind {
                    Kind::Param(id) => out.add_param(id, g)?,
                    Kind::Input => {
                        out.inputs.insert(i, g);
                    }
                    Kind::Constant => {}
                    Kind::Computed => {
                        if self.nodes[i].requires_grad {
                            let contributions = self.node_backward(i, g, &mut out)?;
                            for (parent, pg) in contributions {
                                match &mut grads[parent] {
                                    Some(acc) => acc.add_assign(&pg)?,
                                    slot @ None => *slot = Some(pg),
                                }
                            }
                        }
                    }
                }
            }
            self.release_node(i);
        }
        Ok(out)
    }

    fn release_node(&mut self, i: usize) {
        let node = &mut self.nodes[i];
        self.meter.release(node.saved);
        node.saved = 0;
        if node.kind == Kind::Computed {
            node.value = None;
            node.op = Op::Leaf;
        }
    }

    fn parent_value(&self, i: usize, k: usize) -> &Value {
        self.nodes[self.nodes[i].parents[k]]
            .value
            .as_ref()
            .expect("parent value consumed before its child")
    }

    fn parent_needs_grad(&self, i: usize, k: usize) -> bool {
        self.nodes[self.nodes[i].parents[k]].requires_grad
    }

    /// Cotangents for the parents of node `i` given its output cotangent.
    fn node_backward(&mut self, i: usize, g: Value, out: &mut Gradients) -> Result<Vec<(usize, Value)>> {
        let parents = self.nodes[i].parents.clone();
        let mut res = Vec::with_capacity(parents.len());
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add => {
                res.push((parents[0], g.clone()));
                res.push((parents[1], g));
            }
            Op::Sub => {
                let neg = match &g {
                    Value::Real(t) => Value::Real(t.scale(-1.0)),
                    Value::Complex(t) => Value::Complex(t.scale(-1.0)),
                };
                res.push((parents[0], g));
                res.push((parents[1], neg));
            }
            Op::Scale(s) => {
                let v = match &g {
                    Value::Real(t) => Value::Real(t.scale(*s)),
                    Value::Complex(t) => Value::Complex(t.scale(*s)),
                };
                res.push((parents[0], v));
            }
            Op::Mul => {
                let gc = g.as_complex()?;
                let a = self.parent_value(i, 0).as_complex()?;
                let b = self.parent_value(i, 1).as_complex()?;
                if self.parent_needs_grad(i, 0) {
                    res.push((parents[0], Value::Complex(broadcast_mul_grad(gc, b, a.shape())?)));
                }
                if self.parent_needs_grad(i, 1) {
                    res.push((parents[1], Value::Complex(broadcast_mul_grad(gc, a, b.shape())?)));
                }
            }
            Op::SumLeading => {
                let shape = self.parent_value(i, 0).shape().to_vec();
                let v = match &g {
                    Value::Real(t) => Value::Real(repeat_leading(t, shape[0])),
                    Value::Complex(t) => Value::Complex(repeat_leading(t, shape[0])),
                };
                res.push((parents[0], v));
            }
            Op::Fft2 => res.push((parents[0], Value::Complex(fft::ifft2(g.as_complex()?)?))),
            Op::Ifft2 => res.push((parents[0], Value::Complex(fft::fft2(g.as_complex()?)?))),
            Op::Mask(mask) => res.push((parents[0], Value::Complex(apply_mask(g.as_complex()?, mask)?))),
            Op::ToChannels => res.push((parents[0], Value::Complex(from_channels(g.as_real()?)?))),
            Op::FromChannels => res.push((parents[0], Value::Real(to_channels(g.as_complex()?)?))),
            Op::Conv2d => {
                let gr = g.as_real()?;
                let x = self.parent_value(i, 0).as_real()?;
                let w = self.parent_value(i, 1).as_real()?;
                if self.parent_needs_grad(i, 0) {
                    res.push((parents[0], Value::Real(conv::conv2d_backward_input(gr, w, x.shape())?)));
                }
                let need_w = self.parent_needs_grad(i, 1);
                let need_b = parents.len() > 2 && self.parent_needs_grad(i, 2);
                if need_w || need_b {
                    let (gw, gb) = conv::conv2d_backward_params(gr, x, w.shape())?;
                    if need_w {
                        res.push((parents[1], Value::Real(gw)));
                    }
                    if need_b {
                        res.push((parents[2], Value::Real(gb)));
                    }
                }
            }
            Op::Relu => {
                let x = self.parent_value(i, 0).as_real()?;
                let v = g.as_real()?.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                res.push((parents[0], Value::Real(v)));
            }
            Op::L1Complex(target) => {
                let upstream = g.as_real()?.data()[0];
                let p = self.parent_value(i, 0).as_complex()?;
                let n = p.len().max(1) as f64;
                let v = p.zip_map(target, |a, b| {
                    let d = a - b;
                    let m = d.norm();
                    if m > 0.0 {
                        d * (upstream / (m * n))
                    } else {
                        Complex64::default()
                    }
                })?;
                res.push((parents[0], Value::Complex(v)));
            }
            Op::SumReal => {
                let upstream = g.as_real()?.data()[0];
                let v = match self.parent_value(i, 0) {
                    Value::Real(t) => Value::Real(RealTensor::full(t.shape(), upstream)),
                    Value::Complex(t) => {
                        Value::Complex(ComplexTensor::full(t.shape(), Complex64::new(upstream, 0.0)))
                    }
                };
                res.push((parents[0], v));
            }
            Op::SqNorm => {
                let upstream = g.as_real()?.data()[0];
                let v = match self.parent_value(i, 0) {
                    Value::Real(t) => Value::Real(t.scale(2.0 * upstream)),
                    Value::Complex(t) => Value::Complex(t.scale(2.0 * upstream)),
                };
                res.push((parents[0], v));
            }
            Op::CgSolve { model, iters } => {
                let gc = g.as_complex()?;
                let zero = ComplexTensor::zeros(gc.shape());
                let u = cg::solve(model, gc, zero, *iters)?.x;
                res.push((parents[0], Value::Complex(u.scale(model.mu()))));
            }
            Op::Checkpoint {
                segment,
                inputs,
                digest: expected,
            } => {
                let mut inner = Tape::with_meter(self.meter.clone());
                let vars: Vec<Var> = inputs.iter().map(|v| inner.input(v.clone())).collect();
                let y = segment(&mut inner, &vars)?;
                if digest(inner.value(y)) != *expected {
                    return Err(Error::Contract(
                        "checkpointed segment is not a pure function of its inputs".into(),
                    ));
                }
                let inner_grads = inner.backward_with_seed(y, g)?;
                for (&id, pg) in &inner_grads.params {
                    out.add_param(id, pg.clone())?;
                }
                for (k, v) in vars.iter().enumerate() {
                    if self.parent_needs_grad(i, k) {
                        if let Some(gv) = inner_grads.wrt(*v) {
                            res.push((parents[k], gv.clone()));
                        }
                    }
                }
            }
        }
        log::trace!("backward through {} (node {})", op.name(), i);
        Ok(res)
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for Tape<'_> {
    fn drop(&mut self) {
        let held: usize = self.nodes.iter().map(|n| n.saved).sum();
        self.meter.release(held);
    }
}

fn digest(v: &Value) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    v.shape().hash(&mut h);
    for w in v.to_real_pairs() {
        w.to_bits().hash(&mut h);
    }
    h.finish()
}

// ---- tensor kernels shared by forward and reverse rules ------------------

fn broadcast_split<'t>(
    a: &'t ComplexTensor,
    b: &'t ComplexTensor,
) -> Result<(&'t ComplexTensor, &'t ComplexTensor)> {
    let (big, small) = if a.shape().len() >= b.shape().len() {
        (a, b)
    } else {
        (b, a)
    };
    let suffix = &big.shape()[big.shape().len() - small.shape().len()..];
    if suffix != small.shape() {
        return Err(Error::dim(format!(
            "mul: shapes {:?} and {:?} do not broadcast",
            a.shape(),
            b.shape()
        )));
    }
    Ok((big, small))
}

pub(crate) fn broadcast_mul(a: &ComplexTensor, b: &ComplexTensor) -> Result<ComplexTensor> {
    let (big, small) = broadcast_split(a, b)?;
    let mut out = big.clone();
    let n = small.len().max(1);
    for chunk in out.data_mut().chunks_exact_mut(n) {
        for (o, s) in chunk.iter_mut().zip(small.data()) {
            *o *= s;
        }
    }
    Ok(out)
}

/// Cotangent of one factor: `conj(other) * g`, summed over broadcast axes
/// when the factor was the smaller operand.
fn broadcast_mul_grad(g: &ComplexTensor, other: &ComplexTensor, shape: &[usize]) -> Result<ComplexTensor> {
    let full = broadcast_mul(g, &other.conj())?;
    if full.shape() == shape {
        return Ok(full);
    }
    let mut acc = ComplexTensor::zeros(shape);
    let n = acc.len().max(1);
    for chunk in full.data().chunks_exact(n) {
        for (a, c) in acc.data_mut().iter_mut().zip(chunk) {
            *a += c;
        }
    }
    Ok(acc)
}

fn sum_leading<T>(x: &crate::tensor::Tensor<T>) -> Result<crate::tensor::Tensor<T>>
where
    T: Copy + Default + std::ops::AddAssign,
{
    if x.shape().is_empty() {
        return Err(Error::dim("sum_leading needs at least one axis"));
    }
    let inner = &x.shape()[1..];
    let mut out = crate::tensor::Tensor::<T>::zeros(inner);
    let n = out.len().max(1);
    for chunk in x.data().chunks_exact(n) {
        for (o, v) in out.data_mut().iter_mut().zip(chunk) {
            *o += *v;
        }
    }
    Ok(out)
}

fn repeat_leading<T: Copy + Default>(x: &crate::tensor::Tensor<T>, times: usize) -> crate::tensor::Tensor<T> {
    let mut shape = vec![times];
    shape.extend_from_slice(x.shape());
    let mut data = Vec::with_capacity(times * x.len());
    for _ in 0..times {
        data.extend_from_slice(x.data());
    }
    crate::tensor::Tensor::from_vec(&shape, data).expect("repeat shape")
}

pub(crate) fn apply_mask(x: &ComplexTensor, mask: &RealTensor) -> Result<ComplexTensor> {
    let rank = mask.shape().len();
    if x.shape().len() < rank || &x.shape()[x.shape().len() - rank..] != mask.shape() {
        return Err(Error::dim(format!(
            "mask {:?} does not match trailing axes of {:?}",
            mask.shape(),
            x.shape()
        )));
    }
    let mut out = x.clone();
    let n = mask.len().max(1);
    for chunk in out.data_mut().chunks_exact_mut(n) {
        for (o, m) in chunk.iter_mut().zip(mask.data()) {
            *o *= *m;
        }
    }
    Ok(out)
}

pub(crate) fn to_channels(x: &ComplexTensor) -> Result<RealTensor> {
    let [h, w] = *x.shape() else {
        return Err(Error::dim(format!(
            "to_channels expects an (H, W) image, got {:?}",
            x.shape()
        )));
    };
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend(x.data().iter().map(|c| c.re));
    data.extend(x.data().iter().map(|c| c.im));
    RealTensor::from_vec(&[2, h, w], data)
}

pub(crate) fn from_channels(x: &RealTensor) -> Result<ComplexTensor> {
    let [2, h, w] = *x.shape() else {
        return Err(Error::dim(format!(
            "from_channels expects (2, H, W), got {:?}",
            x.shape()
        )));
    };
    let n = h * w;
    let (re, im) = x.data().split_at(n);
    let data = re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect();
    ComplexTensor::from_vec(&[h, w], data)
}
