//! Central finite-difference checks of tape gradients.

use super::{Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Value;

/// Perturbation used by the checks unless a caller overrides it.
pub const DEFAULT_STEP: f64 = 1e-6;

fn scalar(tape: &Tape<'_>, v: Var) -> Result<f64> {
    let t = tape.real(v)?;
    if t.len() != 1 {
        return Err(Error::Contract(format!("loss must be a scalar, got {:?}", t.shape())));
    }
    Ok(t.data()[0])
}

/// Read or write real-pair coordinate `k` of a value.
fn coordinate(v: &mut Value, k: usize) -> &mut f64 {
    match v {
        Value::Real(t) => &mut t.data_mut()[k],
        Value::Complex(t) => {
            let c = &mut t.data_mut()[k / 2];
            if k % 2 == 0 {
                &mut c.re
            } else {
                &mut c.im
            }
        }
    }
}

fn relative_error(ad: &[f64], fd: &[f64]) -> f64 {
    let diff: f64 = ad.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = ad.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nf = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nf).max(1e-12)
}

/// Largest relative error, over the given inputs, between the tape
/// gradient of `loss` and central differences with step `h`. Each input is
/// compared as a whole vector in its real-pair view.
pub fn input_gradient_error<F>(inputs: &[Value], h: f64, loss: F) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.input(v.clone())).collect();
    let root = loss(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let eval = |values: &[Value]| -> Result<f64> {
        let mut t = Tape::no_grad();
        let vs: Vec<Var> = values.iter().map(|v| t.constant(v.clone())).collect();
        let r = loss(&mut t, &vs)?;
        scalar(&t, r)
    };

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let ad = match grads.wrt(*v) {
            Some(g) => g.to_real_pairs(),
            None => vec![0.0; inputs[i].scalar_elements()],
        };
        let mut fd = Vec::with_capacity(ad.len());
        let mut work = inputs.to_vec();
        for k in 0..inputs[i].scalar_elements() {
            let base = *coordinate(&mut work[i], k);
            *coordinate(&mut work[i], k) = base + h;
            let up = eval(&work)?;
            *coordinate(&mut work[i], k) = base - h;
            let down = eval(&work)?;
            *coordinate(&mut work[i], k) = base;
            fd.push((up - down) / (2.0 * h));
        }
        worst = worst.max(relative_error(&ad, &fd));
    }
    Ok(worst)
}

/// Same check for the parameters of a model. `params` exposes the
/// parameters to perturb; `loss` evaluates the model on a tape.
pub fn param_gradient_error<N, P, F>(model: &N, h: f64, params: P, loss: F) -> Result<f64>
where
    N: Clone,
    P: Fn(&mut N) -> Vec<&mut Parameter>,
    F: for<'t> Fn(&mut Tape<'t>, &'t N) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::new();
        let root = loss(&mut tape, model)?;
        tape.backward(root)?
    };
    let eval = |m: &N| -> Result<f64> {
        let mut t = Tape::no_grad();
        let r = loss(&mut t, m)?;
        scalar(&t, r)
    };

    let mut work = model.clone();
    let count = params(&mut work).len();
    let mut worst: f64 = 0.0;
    for p in 0..count {
        let (id, n) = {
            let list = params(&mut work);
            (list[p].id(), list[p].value().scalar_elements())
        };
        let ad = match grads.param(id) {
            Some(g) => g.to_real_pairs(),
            None => vec![0.0; n],
        };
        let mut fd = Vec::with_capacity(n);
        for k in 0..n {
            let base = *coordinate(params(&mut work)[p].value_mut(), k);
            *coordinate(params(&mut work)[p].value_mut(), k) = base + h;
            let up = eval(&work)?;
            *coordinate(params(&mut work)[p].value_mut(), k) = base - h;
            let down = eval(&work)?;
            *coordinate(params(&mut work)[p].value_mut(), k) = base;
            fd.push((up - down) / (2.0 * h));
        }
        worst = worst.max(relative_error(&ad, &fd));
    }
    Ok(worst)
}
