//! Helpers shared by unit tests.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::physics::{make_coil_maps, make_mask, MaskKind, MaskSpec, Measurement, SensingModel};
use crate::tensor::{numel, ComplexTensor, RealTensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_real(shape: &[usize], rng: &mut ChaCha8Rng) -> RealTensor {
    let n = numel(shape);
    RealTensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_complex(shape: &[usize], rng: &mut ChaCha8Rng) -> ComplexTensor {
    let n = numel(shape);
    ComplexTensor::from_vec(
        shape,
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap()
}

/// Square `n x n`, four-coil, R = 2 model.
pub fn model(seed: u64, n: usize, mu: f64) -> Arc<SensingModel> {
    let mask = make_mask(
        &MaskSpec {
            kind: MaskKind::PoissonDisc2d,
            acceleration: 2.0,
            calibration: (n / 4).min(8),
            seed,
        },
        [n, n],
    )
    .unwrap();
    Arc::new(SensingModel::new(mask, make_coil_maps(4, n, n, seed).unwrap(), 0.5, mu).unwrap())
}

/// Measurement of a random image together with that image.
pub fn problem(seed: u64, n: usize, mu: f64) -> (Measurement, ComplexTensor) {
    let mut r = rng(seed ^ 0xabcdef);
    let x = random_complex(&[n, n], &mut r);
    (Measurement::simulate(model(seed, n, mu), &x).unwrap(), x)
}
