//! Compressed-sensing baseline: l1-regularized orthonormal Haar wavelet
//! coefficients, solved by proximal gradient descent.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::SensingModel;
use crate::tensor::ComplexTensor;

/// Regularization weights used for knee data at R = 4, 12 and 16.
pub const LAMBDA_MRIDATA: [(f64, f64); 3] = [(4.0, 0.12), (12.0, 0.07), (16.0, 0.06)];
/// Regularization weight used for brain data.
pub const LAMBDA_FASTMRI: f64 = 0.001;

fn default_iterations() -> usize {
    100
}
fn default_levels() -> usize {
    3
}
fn default_step() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsConfig {
    pub lambda: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_step")]
    pub step: f64,
}

impl CsConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            iterations: default_iterations(),
            levels: default_levels(),
            step: default_step(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.iterations == 0 {
            return Err(Error::config("CS needs at least one iteration"));
        }
        if !(self.step > 0.0) {
            return Err(Error::config("CS step size must be positive"));
        }
        Ok(())
    }
}

const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One Haar analysis step along a strided line of length `n` (even).
fn haar_forward(line: &mut [Complex64], scratch: &mut Vec<Complex64>) {
    let half = line.len() / 2;
    scratch.clear();
    scratch.extend_from_slice(line);
    for i in 0..half {
        let (a, b) = (scratch[2 * i], scratch[2 * i + 1]);
        line[i] = (a + b) * S;
        line[half + i] = (a - b) * S;
    }
}

fn haar_inverse(line: &mut [Complex64], scratch: &mut Vec<Complex64>) {
    let half = line.len() / 2;
    scratch.clear();
    scratch.extend_from_slice(line);
    for i in 0..half {
        let (s, d) = (scratch[i], scratch[half + i]);
        line[2 * i] = (s + d) * S;
        line[2 * i + 1] = (s - d) * S;
    }
}

fn check_levels(shape: &[usize], levels: usize) -> Result<(usize, usize)> {
    let [h, w] = *shape else {
        return Err(Error::dim(format!("wavelet transform expects (H, W), got {shape:?}")));
    };
    let block = 1usize.checked_shl(levels as u32).unwrap_or(0);
    if block == 0 || h % block != 0 || w % block != 0 {
        return Err(Error::dim(format!("{h}x{w} is not divisible by 2^{levels}")));
    }
    Ok((h, w))
}

/// One Haar level on the top-left `rows x cols` region: rows then
/// columns for analysis, the reverse order for synthesis.
fn separable(x: &mut ComplexTensor, width: usize, rows: usize, cols: usize, inverse: bool) {
    let step = if inverse { haar_inverse } else { haar_forward };
    let mut line = Vec::with_capacity(rows.max(cols));
    let mut scratch = Vec::with_capacity(rows.max(cols));
    let data = x.data_mut();
    let mut pass_rows = |data: &mut [Complex64]| {
        for r in 0..rows {
            step(&mut data[r * width..r * width + cols], &mut scratch);
        }
    };
    let mut col_scratch = Vec::with_capacity(rows);
    let mut pass_cols = |data: &mut [Complex64]| {
        for c in 0..cols {
            line.clear();
            line.extend((0..rows).map(|r| data[r * width + c]));
            step(&mut line, &mut col_scratch);
            for (r, v) in line.iter().enumerate() {
                data[r * width + c] = *v;
            }
        }
    };
    if inverse {
        pass_cols(data);
        pass_rows(data);
    } else {
        pass_rows(data);
        pass_cols(data);
    }
}

/// Orthonormal 2-D Haar analysis with `levels` decompositions, packed in
/// the usual pyramid layout (approximation band in the top-left corner).
pub fn wavelet2(x: &ComplexTensor, levels: usize) -> Result<ComplexTensor> {
    let (h, w) = check_levels(x.shape(), levels)?;
    let mut out = x.clone();
    for l in 0..levels {
        separable(&mut out, w, h >> l, w >> l, false);
    }
    Ok(out)
}

/// Inverse of [`wavelet2`].
pub fn iwavelet2(c: &ComplexTensor, levels: usize) -> Result<ComplexTensor> {
    let (h, w) = check_levels(c.shape(), levels)?;
    let mut out = c.clone();
    for l in (0..levels).rev() {
        separable(&mut out, w, h >> l, w >> l, true);
    }
    Ok(out)
}

/// Complex soft-threshold `c * max(1 - tau / |c|, 0)`.
pub fn soft_threshold(c: &ComplexTensor, tau: f64) -> ComplexTensor {
    c.map(|v| {
        let m = v.norm();
        if m <= tau {
            Complex64::new(0.0, 0.0)
        } else {
            v * (1.0 - tau / m)
        }
    })
}

fn l1(c: &ComplexTensor) -> f64 {
    c.data().iter().map(|v| v.norm()).sum()
}

#[derive(Clone, Debug)]
pub struct CsResult {
    pub image: ComplexTensor,
    /// `1/2 ||Ax - y||^2 + lambda ||Wx||_1` at the start and after every
    /// iteration.
    pub objective: Vec<f64>,
}

pub fn objective(model: &SensingModel, y: &ComplexTensor, x: &ComplexTensor, cfg: &CsConfig) -> Result<f64> {
    let r = model.forward(x)?.sub(y)?;
    Ok(0.5 * r.norm_sqr() + cfg.lambda * l1(&wavelet2(x, cfg.levels)?))
}

/// Proximal gradient descent from the zero-filled image `A^H y`.
pub fn cs_reconstruct(model: &SensingModel, y: &ComplexTensor, cfg: &CsConfig) -> Result<CsResult> {
    cfg.validate()?;
    let mut x = model.adjoint(y)?;
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(objective(model, y, &x, cfg)?);
    for _ in 0..cfg.iterations {
        let grad = model.adjoint(&model.forward(&x)?.sub(y)?)?;
        let mut z = x.clone();
        z.axpy(-cfg.step, &grad)?;
        let c = soft_threshold(&wavelet2(&z, cfg.levels)?, cfg.step * cfg.lambda);
        x = iwavelet2(&c, cfg.levels)?;
        trace.push(objective(model, y, &x, cfg)?);
    }
    Ok(CsResult { image: x, objective: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_complex, rng};

    #[test]
    fn perfect_reconstruction_and_parseval() {
        let mut r = rng(1);
        let x = random_complex(&[32, 16], &mut r);
        for levels in 0..=4 {
            let c = wavelet2(&x, levels).unwrap();
            assert!((c.norm() - x.norm()).abs() < 1e-12 * x.norm());
            assert!(iwavelet2(&c, levels).unwrap().max_abs_diff(&x) < 1e-12);
        }
    }

    #[test]
    fn constant_image_has_one_coefficient() {
        let x = ComplexTensor::full(&[8, 8], Complex64::new(2.0, -1.0));
        let c = wavelet2(&x, 3).unwrap();
        let nonzero: Vec<usize> = (0..64).filter(|&k| c.data()[k].norm() > 1e-12).collect();
        assert_eq!(nonzero, vec![0]);
        // Orthonormality puts the whole energy there: 8 * (2 - i).
        assert!((c.data()[0] - Complex64::new(16.0, -8.0)).norm() < 1e-12);
    }

    #[test]
    fn one_level_by_hand() {
        let x = ComplexTensor::from_vec(
            &[2, 2],
            [1.0, 2.0, 3.0, 4.0].iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
        .unwrap();
        let c = wavelet2(&x, 1).unwrap();
        let expected = [5.0, -1.0, -2.0, 0.0];
        for (got, e) in c.data().iter().zip(expected) {
            assert!((got.re - e).abs() < 1e-15 && got.im == 0.0);
        }
    }

    #[test]
    fn rejects_indivisible_extent() {
        let x = ComplexTensor::zeros(&[12, 16]);
        assert!(matches!(wavelet2(&x, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn soft_threshold_examples() {
        let c = ComplexTensor::from_vec(&[2], vec![Complex64::new(3.0, 4.0), Complex64::new(6.0, 8.0)]).unwrap();
        let t = soft_threshold(&c, 5.0);
        assert_eq!(t.data()[0], Complex64::new(0.0, 0.0));
        assert!((t.data()[1] - Complex64::new(3.0, 4.0)).norm() < 1e-15);
        assert_eq!(soft_threshold(&c, 0.0).data(), c.data());
    }

    #[test]
    fn unregularized_full_sampling_recovers_data() {
        let mut r = rng(2);
        let model = SensingModel::identity(16, 16, 0.5, 1.0).unwrap();
        let x = random_complex(&[16, 16], &mut r);
        let y = model.forward(&x).unwrap();
        let cfg = CsConfig { iterations: 3, ..CsConfig::new(0.0) };
        let out = cs_reconstruct(&model, &y, &cfg).unwrap();
        assert!(out.image.max_abs_diff(&model.adjoint(&y).unwrap()) < 1e-12);
    }

    #[test]
    fn huge_lambda_gives_zero() {
        let (meas, _) = crate::testutil::problem(3, 16, 1.0);
        let out = cs_reconstruct(&meas.model, &meas.kspace, &CsConfig::new(1e9)).unwrap();
        assert_eq!(out.image.max_abs(), 0.0);
    }

    #[test]
    fn objective_never_increases() {
        for seed in 0..3 {
            let (meas, _) = crate::testutil::problem(seed, 16, 1.0);
            let out = cs_reconstruct(&meas.model, &meas.kspace, &CsConfig::new(0.05)).unwrap();
            assert_eq!(out.objective.len(), 101);
            for w in out.objective.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(CsConfig::new(-1.0).validate().is_err());
        assert!(CsConfig { iterations: 0, ..CsConfig::new(0.1) }.validate().is_err());
    }
}
