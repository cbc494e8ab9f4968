use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

const MIN_ELLIPSES: usize = 6;
const MAX_ELLIPSES: usize = 12;

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    value: f64,
    /// Linear intensity ramp inside the ellipse.
    ramp: (f64, f64),
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, outer: bool) -> Self {
        let theta = rng.random_range(0.0..PI);
        let (a, b, cx, cy, value) = if outer {
            (
                rng.random_range(0.7..0.9),
                rng.random_range(0.6..0.85),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(0.5..0.8),
            )
        } else {
            (
                rng.random_range(0.08..0.4),
                rng.random_range(0.05..0.3),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.3..0.4),
            )
        };
        Self {
            cx,
            cy,
            a,
            b,
            cos: theta.cos(),
            sin: theta.sin(),
            value,
            ramp: (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        if u * u + v * v <= 1.0 {
            self.value * (1.0 + self.ramp.0 * u + self.ramp.1 * v)
        } else {
            0.0
        }
    }
}

/// Randomized piecewise-smooth multi-ellipse image with a smooth random
/// phase. Magnitude is scaled to a maximum of exactly 1.
pub fn make_phantom(h: usize, w: usize, seed: u64) -> Result<ComplexTensor> {
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::Parameter(format!("phantom extents must be powers of two, got {h}x{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(MIN_ELLIPSES..=MAX_ELLIPSES);
    let ellipses: Vec<Ellipse> = (0..count).map(|i| Ellipse::random(&mut rng, i == 0)).collect();
    // Low-order polynomial phase, at most about pi/2 across the field.
    let p: [f64; 5] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));

    let mut mag = vec![0.0; h * w];
    for (i, row) in mag.chunks_mut(w).enumerate() {
        let y = 2.0 * (i as f64 + 0.5) / h as f64 - 1.0;
        for (j, m) in row.iter_mut().enumerate() {
            let x = 2.0 * (j as f64 + 0.5) / w as f64 - 1.0;
            *m = ellipses.iter().map(|e| e.at(x, y)).sum::<f64>().max(0.0);
        }
    }
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    let data = mag
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let y = 2.0 * ((k / w) as f64 + 0.5) / h as f64 - 1.0;
            let x = 2.0 * ((k % w) as f64 + 0.5) / w as f64 - 1.0;
            let phase = p[0] * x + p[1] * y + p[2] * x * y + p[3] * x * x + p[4] * y * y;
            Complex64::from_polar((m * scale).min(1.0), phase)
        })
        .collect();
    ComplexTensor::from_vec(&[h, w], data)
}
