//! Orthonormal 2-D FFT over the last two axes, batched over the leading ones.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

fn plan(len: usize, dir: Direction) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        match dir {
            Direction::Forward => p.plan_fft_forward(len),
            Direction::Inverse => p.plan_fft_inverse(len),
        }
    })
}

fn image_dims(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::dim(format!(
            "fft2 needs at least two axes, got shape {:?}",
            shape
        )));
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::UnsupportedSize(format!(
            "fft2 extents must be powers of two, got {}x{}",
            h, w
        )));
    }
    Ok((h, w))
}

fn transform(x: &ComplexTensor, dir: Direction) -> Result<ComplexTensor> {
    let (h, w) = image_dims(x.shape())?;
    let mut out = x.clone();
    let row_fft = plan(w, dir);
    let col_fft = plan(h, dir);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut column = vec![Complex64::default(); h];
    let mut scratch =
        vec![Complex64::default(); row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len())];

    for image in out.data_mut().chunks_exact_mut(h * w) {
        row_fft.process_with_scratch(image, &mut scratch);
        for c in 0..w {
            for r in 0..h {
                column[r] = image[r * w + c];
            }
            col_fft.process_with_scratch(&mut column, &mut scratch);
            for r in 0..h {
                image[r * w + c] = column[r] * scale;
            }
        }
    }
    Ok(out)
}

/// Unitary forward DFT over the last two axes.
pub fn fft2(x: &ComplexTensor) -> Result<ComplexTensor> {
    transform(x, Direction::Forward)
}

/// Unitary inverse DFT over the last two axes.
pub fn ifft2(x: &ComplexTensor) -> Result<ComplexTensor> {
    transform(x, Direction::Inverse)
}
