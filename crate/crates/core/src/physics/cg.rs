//! Conjugate gradient on `(A^H A + mu I) x = b`.

use super::SensingModel;
use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

#[derive(Clone, Debug)]
pub struct CgSolution {
    pub x: ComplexTensor,
    /// `||K x_k - b|| / ||b||` for k = 0 ..= iterations actually run.
    pub residuals: Vec<f64>,
}

impl CgSolution {
    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().unwrap_or(&0.0)
    }
}

fn regularized_normal(model: &SensingModel, x: &ComplexTensor) -> Result<ComplexTensor> {
    let mut out = model.normal(x)?;
    out.axpy(model.mu(), x)?;
    Ok(out)
}

/// Run up to `iters` CG steps on `(A^H A + mu I) x = rhs` from `x0`.
/// Stops early once the residual vanishes to rounding level.
pub fn solve(model: &SensingModel, rhs: &ComplexTensor, x0: ComplexTensor, iters: usize) -> Result<CgSolution> {
    if iters == 0 {
        return Err(Error::Parameter("CG needs at least one iteration".into()));
    }
    if !(model.mu() > 0.0) {
        return Err(Error::Parameter(format!(
            "CG needs mu > 0 (got {}); the system is singular on unsampled frequencies",
            model.mu()
        )));
    }
    rhs.check_same_shape(&x0)?;
    let b_norm = rhs.norm();
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };

    let mut x = x0;
    let mut r = rhs.sub(&regularized_normal(model, &x)?)?;
    let mut p = r.clone();
    let mut rs = r.norm_sqr();
    let mut residuals = vec![rs.sqrt() / scale];
    let floor = (1e-15 * scale).powi(2);

    for _ in 0..iters {
        if rs <= floor {
            break;
        }
        let kp = regularized_normal(model, &p)?;
        let curvature = p.real_dot(&kp);
        if !(curvature > 0.0) {
            break;
        }
        let alpha = rs / curvature;
        x.axpy(alpha, &p)?;
        r.axpy(-alpha, &kp)?;
        let rs_next = r.norm_sqr();
        residuals.push(rs_next.sqrt() / scale);
        let beta = rs_next / rs;
        for (pv, rv) in p.data_mut().iter_mut().zip(r.data()) {
            *pv = rv + *pv * beta;
        }
        rs = rs_next;
    }
    Ok(CgSolution { x, residuals })
}

/// MoDL data-consistency: solve `(A^H A + mu I) x = A^H y + mu z`,
/// warm-started at `z`.
pub fn modl_solve(model: &SensingModel, aty: &ComplexTensor, z: &ComplexTensor, iters: usize) -> Result<CgSolution> {
    let mut rhs = aty.clone();
    rhs.axpy(model.mu(), z)?;
    solve(model, &rhs, z.clone(), iters)
}

/// Recover the CG input from a converged output:
/// `z = ((A^H A + mu I) x_next - A^H y) / mu`.
pub fn cg_inverse(model: &SensingModel, aty: &ComplexTensor, x_next: &ComplexTensor) -> Result<ComplexTensor> {
    let mut z = regularized_normal(model, x_next)?.sub(aty)?;
    z = z.scale(1.0 / model.mu());
    Ok(z)
}

/// Relative residual `||(A^H A + mu I) x - rhs|| / ||rhs||`.
pub fn relative_residual(model: &SensingModel, rhs: &ComplexTensor, x: &ComplexTensor) -> Result<f64> {
    let r = regularized_normal(model, x)?.sub(rhs)?;
    Ok(r.norm() / rhs.norm().max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft;
    use crate::physics::{make_coil_maps, make_mask, MaskKind, MaskSpec};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> ComplexTensor {
        let n = crate::tensor::numel(shape);
        ComplexTensor::from_vec(
            shape,
            (0..n)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    fn model_r4(seed: u64, n: usize, mu: f64) -> SensingModel {
        let mask = make_mask(
            &MaskSpec {
                kind: MaskKind::PoissonDisc2d,
                acceleration: 4.0,
                calibration: (n / 4).min(8),
                seed,
            },
            [n, n],
        )
        .unwrap();
        SensingModel::new(mask, make_coil_maps(4, n, n, seed).unwrap(), 0.5, mu).unwrap()
    }

    #[test]
    fn diagonal_case_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = 0.7;
        let model = SensingModel::identity(16, 16, 0.5, mu).unwrap();
        let y = random(&[1, 16, 16], &mut rng);
        let z = random(&[16, 16], &mut rng);
        let aty = model.adjoint(&y).unwrap();
        let sol = modl_solve(&model, &aty, &z, 10).unwrap();
        let mut expected = aty.clone();
        expected.axpy(mu, &z).unwrap();
        let expected = expected.scale(1.0 / (1.0 + mu));
        assert!(sol.x.max_abs_diff(&expected) < 1e-10);
    }

    #[test]
    fn consistent_system_returns_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = model_r4(2, 32, 4.0);
        let x_true = random(&[32, 32], &mut rng);
        let aty = model.adjoint(&model.forward(&x_true).unwrap()).unwrap();
        let sol = modl_solve(&model, &aty, &x_true, 10).unwrap();
        assert!(sol.x.max_abs_diff(&x_true) < 1e-12);
    }

    #[test]
    fn ten_iterations_reach_small_residual_at_r4() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..5 {
            let model = model_r4(10 + seed, 32, 4.0);
            let y = random(&[4, 32, 32], &mut rng);
            let z = random(&[32, 32], &mut rng);
            let aty = model.adjoint(&y).unwrap();
            let sol = modl_solve(&model, &aty, &z, 10).unwrap();
            let mut rhs = aty.clone();
            rhs.axpy(4.0, &z).unwrap();
            let r = relative_residual(&model, &rhs, &sol.x).unwrap();
            assert!(r < 1e-6, "residual {r}");
        }
    }

    #[test]
    fn energy_norm_error_decreases_every_iteration() {
        // CG minimizes the K-norm of the error over growing Krylov spaces.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = model_r4(4, 16, 0.05);
        let rhs = random(&[16, 16], &mut rng);
        let reference = solve(&model, &rhs, ComplexTensor::zeros(&[16, 16]), 200).unwrap().x;
        let mut last = f64::INFINITY;
        for k in 1..15 {
            let x = solve(&model, &rhs, ComplexTensor::zeros(&[16, 16]), k).unwrap().x;
            let e = x.sub(&reference).unwrap();
            let energy = e.real_dot(&regularized_normal(&model, &e).unwrap());
            assert!(energy <= last * (1.0 + 1e-9), "iteration {k}: {energy} > {last}");
            last = energy;
        }
    }

    #[test]
    fn inverse_round_trip_on_converged_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = model_r4(5, 32, 4.0);
        let y = random(&[4, 32, 32], &mut rng);
        let z = random(&[32, 32], &mut rng);
        let aty = model.adjoint(&y).unwrap();
        let x_next = modl_solve(&model, &aty, &z, 10).unwrap().x;
        let z_back = cg_inverse(&model, &aty, &x_next).unwrap();
        assert!(z_back.sub(&z).unwrap().norm() / z.norm() < 1e-5);
    }

    #[test]
    fn inverse_in_diagonal_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mu = 2.0;
        let model = SensingModel::identity(8, 8, 0.5, mu).unwrap();
        let y = random(&[1, 8, 8], &mut rng);
        let x_next = random(&[8, 8], &mut rng);
        let aty = model.adjoint(&y).unwrap();
        let z = cg_inverse(&model, &aty, &x_next).unwrap();
        let y_img = fft::ifft2(&y).unwrap().reshape(&[8, 8]).unwrap();
        let mut expected = x_next.scale(1.0 + mu);
        expected = expected.sub(&y_img).unwrap().scale(1.0 / mu);
        assert!(z.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn large_mu_inverse_approaches_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = model_r4(7, 16, 1e8);
        let aty = model.adjoint(&random(&[4, 16, 16], &mut rng)).unwrap();
        let x_next = random(&[16, 16], &mut rng);
        let z = cg_inverse(&model, &aty, &x_next).unwrap();
        assert!(z.sub(&x_next).unwrap().norm() / x_next.norm() < 1e-6);
    }

    #[test]
    fn rejects_zero_iterations() {
        let model = SensingModel::identity(8, 8, 0.5, 1.0).unwrap();
        let z = ComplexTensor::zeros(&[8, 8]);
        assert!(matches!(modl_solve(&model, &z, &z, 0), Err(Error::Parameter(_))));
    }
}
