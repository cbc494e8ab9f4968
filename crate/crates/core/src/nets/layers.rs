use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Parameter, Tape, Var};
use crate::conv;
use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, RealTensor, Value};

/// Spatial extent of the probe used to estimate conv spectral norms.
const POWER_PROBE: usize = 16;
const POWER_STEPS: usize = 5;

/// Stopping rule for the fixed-point inversion of `x + g(x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InversionSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for InversionSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 100,
        }
    }
}

/// Same-padded 2-D convolution with bias.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl ConvLayer {
    pub fn gaussian(cin: usize, cout: usize, k: usize, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = cout * cin * k * k;
        let w: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        Self::from_tensors(
            RealTensor::from_vec(&[cout, cin, k, k], w).expect("kernel shape"),
            RealTensor::zeros(&[cout]),
        )
        .expect("consistent shapes")
    }

    pub fn zeroed(cin: usize, cout: usize, k: usize) -> Self {
        Self::from_tensors(RealTensor::zeros(&[cout, cin, k, k]), RealTensor::zeros(&[cout]))
            .expect("consistent shapes")
    }

    pub fn from_tensors(weight: RealTensor, bias: RealTensor) -> Result<Self> {
        let [cout, _, k, k2] = *weight.shape() else {
            return Err(Error::dim(format!("kernel must be 4-D, got {:?}", weight.shape())));
        };
        if k != k2 || k % 2 == 0 || bias.shape() != [cout] {
            return Err(Error::dim(format!(
                "kernel {:?} with bias {:?} is not a valid odd square conv",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Parameter::new(weight),
            bias: Parameter::new(bias),
        })
    }

    pub fn kernel(&self) -> &RealTensor {
        self.weight.value().as_real().expect("real kernel")
    }

    pub fn in_channels(&self) -> usize {
        self.kernel().shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel().shape()[0]
    }

    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.conv2d(x, w, Some(b))
    }

    /// Power-iteration estimate of the operator norm of the kernel (bias
    /// excluded) on a small zero-padded probe.
    pub fn spectral_norm(&self) -> f64 {
        let kernel = self.kernel();
        let shape = [self.in_channels(), POWER_PROBE, POWER_PROBE];
        let n = crate::tensor::numel(&shape);
        // Deterministic, sign-varying start vector.
        let start: Vec<f64> = (0..n).map(|i| ((i * 7919 % 104_729) as f64 / 104_729.0) - 0.37).collect();
        let mut v = RealTensor::from_vec(&shape, start).expect("probe shape");
        v = v.scale(1.0 / v.norm());
        let mut sigma = 0.0;
        for _ in 0..POWER_STEPS {
            let u = conv::conv2d_forward(&v, kernel, None).expect("probe conv");
            sigma = u.norm();
            if sigma == 0.0 {
                return 0.0;
            }
            let back = conv::conv2d_backward_input(&u, kernel, &shape).expect("probe adjoint");
            let nb = back.norm();
            if nb == 0.0 {
                return 0.0;
            }
            v = back.scale(1.0 / nb);
        }
        let u = conv::conv2d_forward(&v, kernel, None).expect("probe conv");
        sigma.max(u.norm())
    }

    /// Scale the kernel down so its estimated spectral norm is at most `bound`.
    pub fn clamp_spectral_norm(&mut self, bound: f64) {
        let sigma = self.spectral_norm();
        if sigma > bound {
            let scaled = self.kernel().scale(bound / sigma);
            self.weight.set_value(Value::Real(scaled)).expect("same shape");
        }
    }
}

/// `x + g(x)` with `g = conv_k . relu . ... . relu . conv_1`.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub convs: Vec<ConvLayer>,
}

impl ResidualBlock {
    pub fn new(convs: Vec<ConvLayer>) -> Result<Self> {
        if convs.is_empty() {
            return Err(Error::config("a residual block needs at least one conv"));
        }
        for pair in convs.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(Error::dim("consecutive convs disagree on channel count"));
            }
        }
        if convs[0].in_channels() != convs.last().unwrap().out_channels() {
            return Err(Error::dim("residual branch must preserve the channel count"));
        }
        Ok(Self { convs })
    }

    pub fn residual_var(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, c) in self.convs.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h)?;
            }
            h = c.apply(tape, h)?;
        }
        Ok(h)
    }

    pub fn forward_var(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let g = self.residual_var(tape, x)?;
        tape.add(x, g)
    }

    pub fn residual(&self, x: &RealTensor) -> Result<RealTensor> {
        let mut tape = Tape::no_grad();
        let v = tape.constant(x.clone());
        let g = self.residual_var(&mut tape, v)?;
        Ok(tape.real(g)?.clone())
    }

    pub fn forward(&self, x: &RealTensor) -> Result<RealTensor> {
        let mut tape = Tape::no_grad();
        let v = tape.constant(x.clone());
        let out = self.forward_var(&mut tape, v)?;
        Ok(tape.real(out)?.clone())
    }

    /// Solve `x + g(x) = y` by the iteration `x <- y - g(x)` from `x = y`.
    pub fn invert(&self, y: &RealTensor, settings: InversionSettings) -> Result<RealTensor> {
        let scale = y.norm().max(f64::MIN_POSITIVE);
        let mut x = y.clone();
        let mut delta = f64::INFINITY;
        for _ in 0..settings.max_iters {
            let next = y.sub(&self.residual(&x)?)?;
            delta = next.sub(&x)?.norm() / scale;
            x = next;
            if !delta.is_finite() {
                break;
            }
            if delta < settings.tol {
                return Ok(x);
            }
        }
        Err(Error::InversionFailed {
            iterations: settings.max_iters,
            residual: delta,
            hint: "the residual branch is not contractive; increase N_cp so the backward pass can fall back to stored checkpoints".into(),
        })
    }

    /// Rescale every kernel so the product of spectral norms is at most
    /// `bound`, which bounds the Lipschitz constant of `g`.
    pub fn enforce_lipschitz(&mut self, bound: f64) {
        let per_conv = bound.powf(1.0 / self.convs.len() as f64);
        for c in &mut self.convs {
            c.clamp_spectral_norm(per_conv);
        }
    }

    /// Product of the estimated spectral norms.
    pub fn lipschitz_estimate(&self) -> f64 {
        self.convs.iter().map(ConvLayer::spectral_norm).product()
    }
}

/// Learned proximal operator: residual blocks applied to the two-channel
/// real view of a complex image.
#[derive(Clone, Debug)]
pub struct ProximalBlock {
    pub blocks: Vec<ResidualBlock>,
}

impl ProximalBlock {
    pub fn forward_var(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let mut h = tape.to_channels(x)?;
        for b in &self.blocks {
            h = b.forward_var(tape, h)?;
        }
        tape.from_channels(h)
    }

    pub fn forward(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        let mut tape = Tape::no_grad();
        let v = tape.constant(x.clone());
        let out = self.forward_var(&mut tape, v)?;
        Ok(tape.complex(out)?.clone())
    }

    pub fn invert(&self, y: &ComplexTensor, settings: InversionSettings) -> Result<ComplexTensor> {
        let mut h = channels(y)?;
        for b in self.blocks.iter().rev() {
            h = b.invert(&h, settings)?;
        }
        unchannels(&h)
    }

    pub fn enforce_lipschitz(&mut self, bound: f64) {
        for b in &mut self.blocks {
            b.enforce_lipschitz(bound);
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.blocks
            .iter()
            .flat_map(|b| b.convs.iter())
            .flat_map(|c| [&c.weight, &c.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.convs.iter_mut())
            .flat_map(|c| [&mut c.weight, &mut c.bias])
            .collect()
    }
}

fn channels(x: &ComplexTensor) -> Result<RealTensor> {
    let mut tape = Tape::no_grad();
    let v = tape.constant(x.clone());
    let c = tape.to_channels(v)?;
    Ok(tape.real(c)?.clone())
}

fn unchannels(x: &RealTensor) -> Result<ComplexTensor> {
    let [2, h, w] = *x.shape() else {
        return Err(Error::dim(format!("expected (2, H, W), got {:?}", x.shape())));
    };
    let n = h * w;
    let (re, im) = x.data().split_at(n);
    ComplexTensor::from_vec(&[h, w], re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_real(shape: &[usize], rng: &mut ChaCha8Rng) -> RealTensor {
        let n = crate::tensor::numel(shape);
        RealTensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn contractive_block(seed: u64) -> ResidualBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ResidualBlock::new(vec![
            ConvLayer::gaussian(2, 8, 3, 0.5, &mut rng),
            ConvLayer::gaussian(8, 2, 3, 0.5, &mut rng),
        ])
        .unwrap();
        b.enforce_lipschitz(0.9);
        b
    }

    #[test]
    fn zero_branch_inverts_to_identity() {
        let b = ResidualBlock::new(vec![ConvLayer::zeroed(2, 4, 3), ConvLayer::zeroed(4, 2, 3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_real(&[2, 8, 8], &mut rng);
        assert_eq!(b.forward(&y).unwrap(), y);
        assert_eq!(b.invert(&y, InversionSettings::default()).unwrap(), y);
    }

    #[test]
    fn spectral_clamp_bounds_the_estimate() {
        let b = contractive_block(2);
        assert!(b.lipschitz_estimate() <= 0.9 + 1e-12);
    }

    #[test]
    fn spectral_norm_of_scaled_identity_kernel() {
        let mut k = RealTensor::zeros(&[2, 2, 3, 3]);
        k.data_mut()[4] = 0.7;
        k.data_mut()[(2 + 1) * 9 + 4] = 0.7;
        let c = ConvLayer::from_tensors(k, RealTensor::zeros(&[2])).unwrap();
        assert!((c.spectral_norm() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn contractive_blocks_round_trip() {
        let settings = InversionSettings { tol: 1e-12, max_iters: 50 };
        for seed in 0..5 {
            let b = contractive_block(10 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_real(&[2, 16, 16], &mut rng);
            let back = b.forward(&b.invert(&x, settings).unwrap()).unwrap();
            assert!(back.sub(&x).unwrap().norm() / x.norm() < 1e-8);
        }
    }

    #[test]
    fn expansive_block_fails_to_invert() {
        // g(x) = -1.5 (relu(x) - relu(-x)) = -1.5 x, so x <- y + 1.5 x diverges.
        let mut up = RealTensor::zeros(&[4, 2, 3, 3]);
        for (o, i, s) in [(0, 0, 1.0), (1, 1, 1.0), (2, 0, -1.0), (3, 1, -1.0)] {
            up.data_mut()[(o * 2 + i) * 9 + 4] = s;
        }
        let mut down = RealTensor::zeros(&[2, 4, 3, 3]);
        for (o, i, s) in [(0, 0, -1.5), (1, 1, -1.5), (0, 2, 1.5), (1, 3, 1.5)] {
            down.data_mut()[(o * 4 + i) * 9 + 4] = s;
        }
        let b = ResidualBlock::new(vec![
            ConvLayer::from_tensors(up, RealTensor::zeros(&[4])).unwrap(),
            ConvLayer::from_tensors(down, RealTensor::zeros(&[2])).unwrap(),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_real(&[2, 8, 8], &mut rng);
        let g = b.residual(&x).unwrap();
        assert!(g.sub(&x.scale(-1.5)).unwrap().max_abs() < 1e-12);
        assert!(matches!(
            b.invert(&x, InversionSettings::default()),
            Err(Error::InversionFailed { .. })
        ));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        assert!(ResidualBlock::new(vec![ConvLayer::zeroed(2, 4, 3), ConvLayer::zeroed(3, 2, 3)]).is_err());
        assert!(ResidualBlock::new(vec![ConvLayer::zeroed(2, 4, 3)]).is_err());
    }
}
