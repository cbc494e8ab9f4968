//! Undersampling masks in FFT order (DC at index `[0, 0]`).
//!
//! Masks are laid out in centered coordinates while they are generated and
//! then rolled by half the extent so they line up with the unshifted FFT.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    PoissonDisc2d,
    Random1dCartesian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub acceleration: f64,
    /// Side of the fully sampled center square (2-D) or number of fully
    /// sampled center columns (1-D).
    pub calibration: usize,
    pub seed: u64,
}

/// Growth of the Poisson-disc radius from k-space center to corner; the
/// sampling density falls off by `(1 + slope)^2` across the plane.
const DENSITY_SLOPE: f64 = 2.0;
const BRIDSON_CANDIDATES: usize = 30;
const RADIUS_SEARCH_STEPS: usize = 40;
const MIN_RADIUS: f64 = 0.5;

pub fn make_mask(spec: &MaskSpec, shape: [usize; 2]) -> Result<RealTensor> {
    let [h, w] = shape;
    if h == 0 || w == 0 {
        return Err(Error::Parameter("mask extents must be positive".into()));
    }
    if !(spec.acceleration >= 1.0) || !spec.acceleration.is_finite() {
        return Err(Error::Parameter(format!(
            "acceleration must be >= 1, got {}",
            spec.acceleration
        )));
    }
    if spec.acceleration == 1.0 {
        return Ok(RealTensor::full(&[h, w], 1.0));
    }
    let centered = match spec.kind {
        MaskKind::PoissonDisc2d => poisson_disc(spec, h, w)?,
        MaskKind::Random1dCartesian => random_columns(spec, h, w)?,
    };
    Ok(fftshift(&centered))
}

/// Total locations over sampled locations.
pub fn achieved_acceleration(mask: &RealTensor) -> f64 {
    let sampled = mask.data().iter().filter(|&&m| m != 0.0).count();
    if sampled == 0 {
        f64::INFINITY
    } else {
        mask.len() as f64 / sampled as f64
    }
}

/// Swap quadrants of a 2-D tensor. For even extents this is its own inverse.
pub fn fftshift(x: &RealTensor) -> RealTensor {
    let [h, w] = *x.shape() else {
        panic!("fftshift expects a 2-D tensor");
    };
    let mut out = RealTensor::zeros(&[h, w]);
    for r in 0..h {
        for c in 0..w {
            out.data_mut()[((r + h / 2) % h) * w + (c + w / 2) % w] = x.data()[r * w + c];
        }
    }
    out
}

fn calibration_bounds(extent: usize, calib: usize) -> std::ops::Range<usize> {
    let calib = calib.min(extent);
    let start = extent / 2 - calib / 2;
    start..start + calib
}

fn target_count(total: usize, acceleration: f64) -> usize {
    ((total as f64 / acceleration).round() as usize).max(1)
}

fn random_columns(spec: &MaskSpec, h: usize, w: usize) -> Result<RealTensor> {
    let target = target_count(w, spec.acceleration);
    let calib = calibration_bounds(w, spec.calibration);
    if target < calib.len() + 1 && spec.calibration > 0 || target > w {
        return Err(Error::Parameter(format!(
            "R = {} leaves {} columns, too few for {} calibration columns plus one sample",
            spec.acceleration,
            target,
            calib.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut others: Vec<usize> = (0..w).filter(|c| !calib.contains(c)).collect();
    others.shuffle(&mut rng);
    let mut columns: Vec<usize> = calib.clone().collect();
    columns.extend(others.into_iter().take(target.saturating_sub(columns.len())));
    let mut mask = RealTensor::zeros(&[h, w]);
    for r in 0..h {
        for &c in &columns {
            mask.data_mut()[r * w + c] = 1.0;
        }
    }
    Ok(mask)
}

/// Variable-density Poisson disc: Bridson dart throwing with a local
/// radius `r0 (1 + slope * rho)`, `rho` the normalized distance from the
/// center. `r0` is bisected to hit the requested count, then a handful of
/// samples are added or removed at random to land on it exactly.
fn poisson_disc(spec: &MaskSpec, h: usize, w: usize) -> Result<RealTensor> {
    let total = h * w;
    let target = target_count(total, spec.acceleration);
    let rows = calibration_bounds(h, spec.calibration);
    let cols = calibration_bounds(w, spec.calibration);
    let calib_count = rows.len() * cols.len();
    if target < calib_count + 1 {
        return Err(Error::Parameter(format!(
            "R = {} allows {} samples, too few for a {}x{} calibration region plus one sample",
            spec.acceleration, target, spec.calibration, spec.calibration
        )));
    }

    let build = |r0: f64| -> Vec<bool> {
        let mut sampled = vec![false; total];
        for r in rows.clone() {
            for c in cols.clone() {
                sampled[r * w + c] = true;
            }
        }
        for (x, y) in bridson(h, w, r0, spec.seed) {
            sampled[(y as usize).min(h - 1) * w + (x as usize).min(w - 1)] = true;
        }
        sampled
    };
    let count = |s: &[bool]| s.iter().filter(|&&b| b).count();

    // Density integrates to roughly the area divided by r^2, so start near
    // sqrt(area / target) and bracket from there. Radii under half a pixel
    // only pile several darts onto one pixel.
    let guess = (total as f64 / target as f64).sqrt();
    let (mut lo, mut hi) = (MIN_RADIUS, guess * 2.0);
    let mut best = build(hi);
    let mut best_gap = count(&best).abs_diff(target);
    for _ in 0..RADIUS_SEARCH_STEPS {
        let mid = 0.5 * (lo + hi);
        let s = build(mid);
        let n = count(&s);
        let gap = n.abs_diff(target);
        if gap < best_gap {
            best = s;
            best_gap = gap;
        }
        if n > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if best_gap * 50 <= target {
            break;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_ad10);
    let in_calib = |i: usize| rows.contains(&(i / w)) && cols.contains(&(i % w));
    let n = count(&best);
    if n > target {
        let mut removable: Vec<usize> = (0..total).filter(|&i| best[i] && !in_calib(i)).collect();
        removable.shuffle(&mut rng);
        for &i in removable.iter().take(n - target) {
            best[i] = false;
        }
    } else if n < target {
        let mut free: Vec<usize> = (0..total).filter(|&i| !best[i]).collect();
        free.shuffle(&mut rng);
        for &i in free.iter().take(target - n) {
            best[i] = true;
        }
    }
    RealTensor::from_vec(&[h, w], best.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect())
}

fn bridson(h: usize, w: usize, r0: f64, seed: u64) -> Vec<(f64, f64)> {
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let rho_max = (cx * cx + cy * cy).sqrt();
    let radius = |x: f64, y: f64| {
        let rho = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() / rho_max;
        r0 * (1.0 + DENSITY_SLOPE * rho)
    };
    let cell = r0 / std::f64::consts::SQRT_2;
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<u32>> = vec![Vec::new(); gw * gh];
    let reach = (r0 * (1.0 + DENSITY_SLOPE) / cell).ceil() as isize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut active: Vec<usize> = Vec::new();

    let fits = |points: &[(f64, f64)], grid: &[Vec<u32>], x: f64, y: f64| -> bool {
        let r = radius(x, y);
        let r2 = r * r;
        let gx = (x / cell) as isize;
        let gy = (y / cell) as isize;
        let span = ((r / cell).ceil() as isize).min(reach);
        for j in (gy - span).max(0)..=(gy + span).min(gh as isize - 1) {
            for i in (gx - span).max(0)..=(gx + span).min(gw as isize - 1) {
                for &p in &grid[j as usize * gw + i as usize] {
                    let (px, py) = points[p as usize];
                    if (px - x).powi(2) + (py - y).powi(2) < r2 {
                        return false;
                    }
                }
            }
        }
        true
    };

    let first = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
    grid[(first.1 / cell) as usize * gw + (first.0 / cell) as usize].push(0);
    points.push(first);
    active.push(0);

    while !active.is_empty() {
        let slot = rng.random_range(0..active.len());
        let (px, py) = points[active[slot]];
        let r = radius(px, py);
        let mut placed = false;
        for _ in 0..BRIDSON_CANDIDATES {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let dist = rng.random_range(r..2.0 * r);
            let (x, y) = (px + dist * angle.cos(), py + dist * angle.sin());
            if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                continue;
            }
            if fits(&points, &grid, x, y) {
                let id = points.len() as u32;
                grid[(y / cell) as usize * gw + (x / cell) as usize].push(id);
                points.push((x, y));
                active.push(id as usize);
                placed = true;
                break;
            }
        }
        if !placed {
            active.swap_remove(slot);
        }
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: MaskKind, r: f64, seed: u64) -> MaskSpec {
        MaskSpec {
            kind,
            acceleration: r,
            calibration: 8,
            seed,
        }
    }

    #[test]
    fn r1_is_fully_sampled() {
        let m = make_mask(&spec(MaskKind::PoissonDisc2d, 1.0, 0), [16, 16]).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn poisson_disc_hits_requested_acceleration() {
        for seed in 0..5 {
            let m = make_mask(&spec(MaskKind::PoissonDisc2d, 4.0, seed), [64, 64]).unwrap();
            let r = achieved_acceleration(&m);
            assert!((3.6..=4.4).contains(&r), "achieved R = {r}");
        }
    }

    #[test]
    fn calibration_square_is_fully_sampled() {
        for kind in [MaskKind::PoissonDisc2d, MaskKind::Random1dCartesian] {
            let m = fftshift(&make_mask(&spec(kind, 4.0, 3), [64, 64]).unwrap());
            for r in 28..36 {
                for c in 28..36 {
                    assert_eq!(m.data()[r * 64 + c], 1.0, "{kind:?} at ({r}, {c})");
                }
            }
        }
    }

    #[test]
    fn dc_sits_at_index_zero() {
        let m = make_mask(&spec(MaskKind::PoissonDisc2d, 8.0, 1), [32, 32]).unwrap();
        assert_eq!(m.data()[0], 1.0);
    }

    #[test]
    fn same_seed_same_mask() {
        let a = make_mask(&spec(MaskKind::PoissonDisc2d, 4.0, 9), [32, 32]).unwrap();
        let b = make_mask(&spec(MaskKind::PoissonDisc2d, 4.0, 9), [32, 32]).unwrap();
        let c = make_mask(&spec(MaskKind::PoissonDisc2d, 4.0, 10), [32, 32]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn random_1d_samples_whole_columns() {
        let m = make_mask(&spec(MaskKind::Random1dCartesian, 4.0, 2), [64, 64]).unwrap();
        for c in 0..64 {
            let first = m.data()[c];
            assert!((0..64).all(|r| m.data()[r * 64 + c] == first), "column {c} is partial");
        }
        assert!((achieved_acceleration(&m) - 4.0).abs() < 0.4);
    }

    #[test]
    fn sampling_density_decreases_away_from_center() {
        let m = fftshift(&make_mask(&spec(MaskKind::PoissonDisc2d, 4.0, 4), [64, 64]).unwrap());
        let density = |lo: f64, hi: f64| {
            let mut hits = 0.0;
            let mut n = 0.0;
            for r in 0..64 {
                for c in 0..64 {
                    let d = ((r as f64 - 32.0).powi(2) + (c as f64 - 32.0).powi(2)).sqrt();
                    if d >= lo && d < hi {
                        hits += m.data()[r * 64 + c];
                        n += 1.0;
                    }
                }
            }
            hits / n
        };
        assert!(density(6.0, 16.0) > density(24.0, 45.0));
    }

    #[test]
    fn too_much_acceleration_is_rejected() {
        assert!(matches!(
            make_mask(&spec(MaskKind::PoissonDisc2d, 70.0, 0), [64, 64]),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            make_mask(&spec(MaskKind::Random1dCartesian, 8.0, 0), [64, 64]),
            Err(Error::Parameter(_))
        ));
        assert!(make_mask(&spec(MaskKind::PoissonDisc2d, 0.5, 0), [8, 8]).is_err());
    }
}
