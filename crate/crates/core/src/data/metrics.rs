//! Image quality metrics on magnitude images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, RealTensor};

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn magnitudes(reference: &ComplexTensor, recon: &ComplexTensor) -> Result<(RealTensor, RealTensor)> {
    reference.check_same_shape(recon)?;
    Ok((reference.abs(), recon.abs()))
}

/// `20 log10(max|ref| / rmse)` over magnitudes; `+inf` when the magnitudes
/// agree exactly.
pub fn psnr(reference: &ComplexTensor, recon: &ComplexTensor) -> Result<f64> {
    let (a, b) = magnitudes(reference, recon)?;
    let mse = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (a.max_abs() / mse.sqrt()).log10())
}

/// `‖|rec| - |ref|‖ / ‖|ref|‖`.
pub fn nrmse(reference: &ComplexTensor, recon: &ComplexTensor) -> Result<f64> {
    let (a, b) = magnitudes(reference, recon)?;
    let den = a.norm();
    if den == 0.0 {
        return Err(Error::Parameter("nrmse of an all-zero reference".into()));
    }
    let num = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    Ok(num / den)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Single-scale SSIM of two real images, averaged over every fully
/// contained 7x7 Gaussian window. Data range is `max|ref|`.
pub fn ssim(reference: &RealTensor, recon: &RealTensor) -> Result<f64> {
    reference.check_same_shape(recon)?;
    let [h, w] = *reference.shape() else {
        return Err(Error::dim(format!("ssim expects an (H, W) image, got {:?}", reference.shape())));
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")));
    }
    let range = reference.max_abs();
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let g = gaussian_window();
    let (x, y) = (reference.data(), recon.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - SSIM_WINDOW {
        for j in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (a, ga) in g.iter().enumerate() {
                for (b, gb) in g.iter().enumerate() {
                    let wgt = ga * gb;
                    let p = x[(i + a) * w + j + b];
                    let q = y[(i + a) * w + j + b];
                    mx += wgt * p;
                    my += wgt * q;
                    xx += wgt * p * p;
                    yy += wgt * q * q;
                    xy += wgt * p * q;
                }
            }
            let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += if den == 0.0 { 1.0 } else { num / den };
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM of the magnitude images.
pub fn ssim_magnitude(reference: &ComplexTensor, recon: &ComplexTensor) -> Result<f64> {
    let (a, b) = magnitudes(reference, recon)?;
    ssim(&a, &b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ({:.4})", self.mean, self.std)
    }
}

/// Per-item PSNR, SSIM and nRMSE.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub nrmse: Vec<f64>,
}

impl MetricSet {
    pub fn push(&mut self, reference: &ComplexTensor, recon: &ComplexTensor) -> Result<()> {
        self.psnr.push(psnr(reference, recon)?);
        self.ssim.push(ssim_magnitude(reference, recon)?);
        self.nrmse.push(nrmse(reference, recon)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.psnr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psnr.is_empty()
    }

    pub fn mean_psnr(&self) -> Summary {
        Summary::of(&self.psnr)
    }

    pub fn mean_ssim(&self) -> Summary {
        Summary::of(&self.ssim)
    }

    pub fn mean_nrmse(&self) -> Summary {
        Summary::of(&self.nrmse)
    }
}
