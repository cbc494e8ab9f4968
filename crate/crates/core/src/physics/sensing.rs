use num_complex::Complex64;
use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fft;
use crate::tensor::{ComplexTensor, RealTensor};

/// Largest tolerated deviation of `sum_c |S_c|^2` from one.
const MAP_NORMALIZATION_TOL: f64 = 1e-9;

/// Multi-coil Cartesian sensing operator with its DC/CG settings.
///
/// Immutable once built; share it behind an [`Arc`].
#[derive(Clone, Debug)]
pub struct SensingModel {
    mask: Arc<RealTensor>,
    coil_maps: Arc<ComplexTensor>,
    conj_maps: Arc<ComplexTensor>,
    step_size: f64,
    mu: f64,
}

impl SensingModel {
    pub fn new(mask: RealTensor, coil_maps: ComplexTensor, step_size: f64, mu: f64) -> Result<Self> {
        let [c, h, w] = *coil_maps.shape() else {
            return Err(Error::dim(format!(
                "coil maps must be (C, H, W), got {:?}",
                coil_maps.shape()
            )));
        };
        if c == 0 {
            return Err(Error::dim("at least one coil is required"));
        }
        if mask.shape() != [h, w] {
            return Err(Error::dim(format!(
                "mask {:?} does not match image shape [{}, {}]",
                mask.shape(),
                h,
                w
            )));
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Parameter("mask entries must be 0 or 1".into()));
        }
        let plane = h * w;
        for p in 0..plane {
            let s: f64 = (0..c).map(|k| coil_maps.data()[k * plane + p].norm_sqr()).sum();
            if (s - 1.0).abs() > MAP_NORMALIZATION_TOL {
                return Err(Error::Parameter(format!(
                    "coil maps are not normalized at pixel {} (sum of squares {})",
                    p, s
                )));
            }
        }
        validate_positive("step size", step_size)?;
        validate_positive("mu", mu)?;
        let conj_maps = Arc::new(coil_maps.conj());
        Ok(Self {
            mask: Arc::new(mask),
            coil_maps: Arc::new(coil_maps),
            conj_maps,
            step_size,
            mu,
        })
    }

    /// Fully sampled, single unit coil: `A = F`.
    pub fn identity(h: usize, w: usize, step_size: f64, mu: f64) -> Result<Self> {
        Self::new(
            RealTensor::full(&[h, w], 1.0),
            ComplexTensor::full(&[1, h, w], Complex64::new(1.0, 0.0)),
            step_size,
            mu,
        )
    }

    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        validate_positive("mu", mu)?;
        Ok(Self { mu, ..self.clone() })
    }

    pub fn with_step_size(&self, step_size: f64) -> Result<Self> {
        validate_positive("step size", step_size)?;
        Ok(Self {
            step_size,
            ..self.clone()
        })
    }

    pub fn mask(&self) -> &Arc<RealTensor> {
        &self.mask
    }

    pub fn coil_maps(&self) -> &Arc<ComplexTensor> {
        &self.coil_maps
    }

    pub fn coils(&self) -> usize {
        self.coil_maps.shape()[0]
    }

    pub fn image_shape(&self) -> [usize; 2] {
        [self.coil_maps.shape()[1], self.coil_maps.shape()[2]]
    }

    pub fn kspace_shape(&self) -> [usize; 3] {
        let [h, w] = self.image_shape();
        [self.coils(), h, w]
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    fn check_image(&self, x: &ComplexTensor) -> Result<()> {
        if x.shape() != self.image_shape() {
            return Err(Error::dim(format!(
                "image {:?} does not match model {:?}",
                x.shape(),
                self.image_shape()
            )));
        }
        Ok(())
    }

    fn check_kspace(&self, y: &ComplexTensor) -> Result<()> {
        if y.shape() != self.kspace_shape() {
            return Err(Error::dim(format!(
                "k-space {:?} does not match model {:?}",
                y.shape(),
                self.kspace_shape()
            )));
        }
        Ok(())
    }

    /// `A x = Ω F (S_c x)` for every coil.
    pub fn forward(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        self.check_image(x)?;
        let plane = x.len();
        let mut coil_images = ComplexTensor::zeros(&self.kspace_shape());
        for (dst, s) in coil_images
            .data_mut()
            .chunks_exact_mut(plane)
            .zip(self.coil_maps.data().chunks_exact(plane))
        {
            for ((d, sv), xv) in dst.iter_mut().zip(s).zip(x.data()) {
                *d = sv * xv;
            }
        }
        let k = fft::fft2(&coil_images)?;
        crate::autodiff::apply_mask(&k, &self.mask)
    }

    /// `A^H y = sum_c conj(S_c) F^H (Ω y_c)`.
    pub fn adjoint(&self, y: &ComplexTensor) -> Result<ComplexTensor> {
        self.check_kspace(y)?;
        let masked = crate::autodiff::apply_mask(y, &self.mask)?;
        let coil_images = fft::ifft2(&masked)?;
        let [h, w] = self.image_shape();
        let plane = h * w;
        let mut out = ComplexTensor::zeros(&[h, w]);
        for (src, s) in coil_images
            .data()
            .chunks_exact(plane)
            .zip(self.conj_maps.data().chunks_exact(plane))
        {
            for ((o, sv), v) in out.data_mut().iter_mut().zip(s).zip(src) {
                *o += sv * v;
            }
        }
        Ok(out)
    }

    /// `A^H A x`.
    pub fn normal(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        self.adjoint(&self.forward(x)?)
    }

    /// `A x` recorded on a tape.
    pub fn forward_var(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        self.check_image(tape.complex(x)?)?;
        let maps = tape.constant((*self.coil_maps).clone());
        let coil_images = tape.mul(maps, x)?;
        let k = tape.fft2(coil_images)?;
        tape.mask(k, self.mask.clone())
    }

    /// `A^H y` recorded on a tape.
    pub fn adjoint_var(&self, tape: &mut Tape<'_>, y: Var) -> Result<Var> {
        self.check_kspace(tape.complex(y)?)?;
        let masked = tape.mask(y, self.mask.clone())?;
        let coil_images = tape.ifft2(masked)?;
        let conj_maps = tape.constant((*self.conj_maps).clone());
        let weighted = tape.mul(conj_maps, coil_images)?;
        tape.sum_leading(weighted)
    }

    /// Gradient step on `||Ax - y||^2`: `x - 2t A^H (A x - y)`, on a tape.
    pub fn dc_step_var(&self, tape: &mut Tape<'_>, x: Var, y: Var) -> Result<Var> {
        let ax = self.forward_var(tape, x)?;
        let residual = tape.sub(ax, y)?;
        let grad = self.adjoint_var(tape, residual)?;
        let step = tape.scale(grad, 2.0 * self.step_size)?;
        tape.sub(x, step)
    }
}

/// Gradient step on `||Ax - y||^2`: `x - 2t A^H (A x - y)`.
pub fn dc_step(model: &SensingModel, x: &ComplexTensor, y: &ComplexTensor) -> Result<ComplexTensor> {
    let residual = model.forward(x)?.sub(y)?;
    let grad = model.adjoint(&residual)?;
    let mut out = x.clone();
    out.axpy(-2.0 * model.step_size(), &grad)?;
    Ok(out)
}

fn validate_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Parameter(format!("{} must be positive and finite, got {}", name, v)));
    }
    Ok(())
}
