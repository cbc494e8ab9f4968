use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Parameter};
use crate::error::{Error, Result};
use crate::tensor::Value;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction over a fixed, ordered list of parameters,
/// acting on their real-pair view.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Parameter]) -> Self {
        let zeros = |p: &&Parameter| vec![0.0; p.value().scalar_elements()];
        Self {
            config,
            steps: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    /// One update. Parameters without an entry in `grads` see a zero
    /// gradient (their moments still decay).
    pub fn step(&mut self, params: &mut [&mut Parameter], grads: &Gradients) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dim(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads.param(p.id()).map(Value::to_real_pairs);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if m.len() != p.value().scalar_elements() {
                return Err(Error::dim("optimizer state does not match parameter size"));
            }
            let update = |k: usize, x: &mut f64| {
                let gk = g.as_ref().map_or(0.0, |g| g[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *x -= lr * mh / (vh.sqrt() + eps);
            };
            apply_pairs(p.value_mut(), update);
        }
        Ok(())
    }
}

fn apply_pairs(v: &mut Value, mut f: impl FnMut(usize, &mut f64)) {
    match v {
        Value::Real(t) => {
            for (k, x) in t.data_mut().iter_mut().enumerate() {
                f(k, x);
            }
        }
        Value::Complex(t) => {
            for (k, c) in t.data_mut().iter_mut().enumerate() {
                f(2 * k, &mut c.re);
                f(2 * k + 1, &mut c.im);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::{ComplexTensor, RealTensor};
    use num_complex::Complex64;

    /// Gradients of `<p, g>`, written as `(|p + g|^2 - |p - g|^2) / 4`.
    fn grads_for(p: &Parameter, g: &RealTensor) -> Gradients {
        let mut t = Tape::new();
        let v = t.param(p);
        let w = t.constant(g.clone());
        let a = t.add(v, w).unwrap();
        let b = t.sub(v, w).unwrap();
        let qa = t.sq_norm(a).unwrap();
        let qb = t.sq_norm(b).unwrap();
        let d = t.sub(qa, qb).unwrap();
        let root = t.scale(d, 0.25).unwrap();
        t.backward(root).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Parameter::new(RealTensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap());
        let before = p.value().clone();
        let mut opt = Adam::new(AdamConfig::default(), &[&p]);
        opt.step(&mut [&mut p], &Gradients::default()).unwrap();
        assert_eq!(p.value(), &before);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let mut p = Parameter::new(RealTensor::from_vec(&[4], vec![0.0, 1.0, -2.0, 3.0]).unwrap());
        let g = RealTensor::from_vec(&[4], vec![0.3, -2.0, 1e-9, 0.0]).unwrap();
        let grads = grads_for(&p, &g);
        let g = grads.param(p.id()).unwrap().as_real().unwrap().clone();
        let before = p.value().as_real().unwrap().clone();
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(cfg, &[&p]);
        opt.step(&mut [&mut p], &grads).unwrap();
        let after = p.value().as_real().unwrap();
        for k in 0..4 {
            let gk = g.data()[k];
            // m_hat = g and v_hat = g^2 after one step
            let expected = before.data()[k] - cfg.lr * gk / (gk.abs() + cfg.eps);
            assert!((after.data()[k] - expected).abs() < 1e-15, "{k}");
        }
    }

    #[test]
    fn complex_parameters_update_both_parts() {
        let mut p = Parameter::new(ComplexTensor::full(&[2], Complex64::new(1.0, 1.0)));
        let mut t = Tape::new();
        let v = t.param(&p);
        let l = t.sum_real(v).unwrap();
        let grads = t.backward(l).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &[&p]);
        opt.step(&mut [&mut p], &grads).unwrap();
        let c = p.value().as_complex().unwrap().data()[0];
        assert!((c.re - (1.0 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(c.im, 1.0);
    }

    #[test]
    fn identical_inputs_give_identical_states() {
        let make = || Parameter::new(RealTensor::from_vec(&[2], vec![0.1, 0.2]).unwrap());
        let (mut a, mut b) = (make(), make());
        let g = RealTensor::from_vec(&[2], vec![1.0, -3.0]).unwrap();
        let (ga, gb) = (grads_for(&a, &g), grads_for(&b, &g));
        let mut oa = Adam::new(AdamConfig::default(), &[&a]);
        let mut ob = Adam::new(AdamConfig::default(), &[&b]);
        for _ in 0..3 {
            oa.step(&mut [&mut a], &ga).unwrap();
            ob.step(&mut [&mut b], &gb).unwrap();
        }
        assert_eq!(oa.m, ob.m);
        assert_eq!(oa.v, ob.v);
        assert_eq!(a.value(), b.value());
    }
}
