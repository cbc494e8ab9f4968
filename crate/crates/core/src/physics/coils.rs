//! Synthetic receive-coil sensitivities.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

/// `C` smooth coil maps of shape `(C, H, W)`, normalized so that
/// `sum_c |S_c|^2 = 1` at every pixel.
///
/// Coils sit evenly on a ring around the field of view with a small random
/// jitter in angle; each has a Gaussian magnitude profile and a slowly
/// varying linear phase.
pub fn make_coil_maps(coils: usize, h: usize, w: usize, seed: u64) -> Result<ComplexTensor> {
    if coils == 0 || h == 0 || w == 0 {
        return Err(Error::Parameter(format!(
            "coil maps need positive extents, got C={coils}, H={h}, W={w}"
        )));
    }
    if coils == 1 {
        return Ok(ComplexTensor::full(&[1, h, w], Complex64::new(1.0, 0.0)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = h * w;
    let mut maps = ComplexTensor::zeros(&[coils, h, w]);
    let width = 0.6;
    for c in 0..coils {
        let angle = std::f64::consts::TAU * (c as f64 + rng.random_range(-0.1..0.1)) / coils as f64;
        let (cy, cx) = (0.9 * angle.sin(), 0.9 * angle.cos());
        let phase0 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let (py, px) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let m = &mut maps.data_mut()[c * plane..][..plane];
        for r in 0..h {
            let y = 2.0 * (r as f64 + 0.5) / h as f64 - 1.0;
            for k in 0..w {
                let x = 2.0 * (k as f64 + 0.5) / w as f64 - 1.0;
                let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                m[r * w + k] = Complex64::from_polar(mag, phase0 + py * y + px * x);
            }
        }
    }
    let data = maps.data_mut();
    for p in 0..plane {
        let energy: f64 = (0..coils).map(|c| data[c * plane + p].norm_sqr()).sum();
        let inv = 1.0 / energy.sqrt();
        for c in 0..coils {
            data[c * plane + p] *= inv;
        }
    }
    Ok(maps)
}
