//! Direct 2-D convolution (stride 1, zero "same" padding, odd square kernels)
//! and its two adjoints. Inputs are `(C, H, W)` or `(B, C, H, W)`.

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeometry {
    pub fn infer(input: &[usize], weight: &[usize]) -> Result<Self> {
        let (batch, c, h, w) = match *input {
            [c, h, w] => (1, c, h, w),
            [b, c, h, w] => (b, c, h, w),
            _ => {
                return Err(Error::dim(format!(
                    "conv2d input must be (C,H,W) or (B,C,H,W), got {:?}",
                    input
                )))
            }
        };
        let [co, ci, kh, kw] = *weight else {
            return Err(Error::dim(format!(
                "conv2d kernel must be (Cout,Cin,K,K), got {:?}",
                weight
            )));
        };
        if ci != c {
            return Err(Error::dim(format!(
                "conv2d kernel expects {} input channels, input has {}",
                ci, c
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::dim(format!(
                "conv2d kernel must be square with odd extent, got {}x{}",
                kh, kw
            )));
        }
        Ok(Self {
            batch,
            in_channels: c,
            out_channels: co,
            height: h,
            width: w,
            kernel: kh,
        })
    }

    pub fn output_shape(&self, input_rank: usize) -> Vec<usize> {
        if input_rank == 3 {
            vec![self.out_channels, self.height, self.width]
        } else {
            vec![self.batch, self.out_channels, self.height, self.width]
        }
    }
}

/// Visit every (kernel tap, output row) pair with the valid column span,
/// handing the callback `(ky, kx, out_row, in_row, out_cols, in_start)`.
#[inline]
fn for_each_tap(
    h: usize,
    w: usize,
    k: usize,
    mut f: impl FnMut(usize, usize, usize, usize, std::ops::Range<usize>, usize),
) {
    let pad = (k / 2) as isize;
    for ky in 0..k {
        let dy = ky as isize - pad;
        let y0 = (-dy).max(0) as usize;
        let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
        for kx in 0..k {
            let dx = kx as isize - pad;
            let x0 = (-dx).max(0) as usize;
            let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
            if x0 >= x1 {
                continue;
            }
            for y in y0..y1 {
                let yin = (y as isize + dy) as usize;
                f(ky, kx, y, yin, x0..x1, (x0 as isize + dx) as usize);
            }
        }
    }
}

pub fn conv2d_forward(
    input: &RealTensor,
    weight: &RealTensor,
    bias: Option<&RealTensor>,
) -> Result<RealTensor> {
    let g = ConvGeometry::infer(input.shape(), weight.shape())?;
    if let Some(b) = bias {
        if b.shape() != [g.out_channels] {
            return Err(Error::dim(format!(
                "conv2d bias must have shape [{}], got {:?}",
                g.out_channels,
                b.shape()
            )));
        }
    }
    let (h, w, k) = (g.height, g.width, g.kernel);
    let plane = h * w;
    let mut out = RealTensor::zeros(&g.output_shape(input.shape().len()));
    let x = input.data();
    let wt = weight.data();
    let o = out.data_mut();
    for b in 0..g.batch {
        for co in 0..g.out_channels {
            let out_plane = &mut o[(b * g.out_channels + co) * plane..][..plane];
            if let Some(bias) = bias {
                out_plane.fill(bias.data()[co]);
            }
            for ci in 0..g.in_channels {
                let in_plane = &x[(b * g.in_channels + ci) * plane..][..plane];
                let taps = &wt[(co * g.in_channels + ci) * k * k..][..k * k];
                for_each_tap(h, w, k, |ky, kx, y, yin, cols, xin| {
                    let wv = taps[ky * k + kx];
                    let dst = &mut out_plane[y * w + cols.start..y * w + cols.end];
                    let src = &in_plane[yin * w + xin..][..dst.len()];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wv * s;
                    }
                });
            }
        }
    }
    Ok(out)
}

/// Adjoint of the convolution with respect to its input.
pub fn conv2d_backward_input(
    grad_out: &RealTensor,
    weight: &RealTensor,
    input_shape: &[usize],
) -> Result<RealTensor> {
    let g = ConvGeometry::infer(input_shape, weight.shape())?;
    let (h, w, k) = (g.height, g.width, g.kernel);
    let plane = h * w;
    let mut gin = RealTensor::zeros(input_shape);
    let go = grad_out.data();
    let wt = weight.data();
    let gi = gin.data_mut();
    for b in 0..g.batch {
        for ci in 0..g.in_channels {
            let gin_plane = &mut gi[(b * g.in_channels + ci) * plane..][..plane];
            for co in 0..g.out_channels {
                let go_plane = &go[(b * g.out_channels + co) * plane..][..plane];
                let taps = &wt[(co * g.in_channels + ci) * k * k..][..k * k];
                for_each_tap(h, w, k, |ky, kx, y, yin, cols, xin| {
                    let wv = taps[ky * k + kx];
                    let src = &go_plane[y * w + cols.start..y * w + cols.end];
                    let dst = &mut gin_plane[yin * w + xin..][..src.len()];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wv * s;
                    }
                });
            }
        }
    }
    Ok(gin)
}

/// Gradients with respect to kernel and bias.
pub fn conv2d_backward_params(
    grad_out: &RealTensor,
    input: &RealTensor,
    weight_shape: &[usize],
) -> Result<(RealTensor, RealTensor)> {
    let g = ConvGeometry::infer(input.shape(), weight_shape)?;
    let (h, w, k) = (g.height, g.width, g.kernel);
    let plane = h * w;
    let mut gw = RealTensor::zeros(weight_shape);
    let mut gb = RealTensor::zeros(&[g.out_channels]);
    let go = grad_out.data();
    let x = input.data();
    for b in 0..g.batch {
        for co in 0..g.out_channels {
            let go_plane = &go[(b * g.out_channels + co) * plane..][..plane];
            gb.data_mut()[co] += go_plane.iter().sum::<f64>();
            for ci in 0..g.in_channels {
                let in_plane = &x[(b * g.in_channels + ci) * plane..][..plane];
                let taps = &mut gw.data_mut()[(co * g.in_channels + ci) * k * k..][..k * k];
                for_each_tap(h, w, k, |ky, kx, y, yin, cols, xin| {
                    let a = &go_plane[y * w + cols.start..y * w + cols.end];
                    let s = &in_plane[yin * w + xin..][..a.len()];
                    taps[ky * k + kx] += a.iter().zip(s).map(|(p, q)| p * q).sum::<f64>();
                });
            }
        }
    }
    Ok((gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> RealTensor {
        let n = crate::tensor::numel(shape);
        RealTensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Literal quadruple loop with explicit bounds checks.
    fn naive(input: &RealTensor, weight: &RealTensor) -> RealTensor {
        let [c, h, w] = input.shape() else { unreachable!() };
        let (c, h, w) = (*c, *h, *w);
        let co = weight.shape()[0];
        let k = weight.shape()[2];
        let pad = (k / 2) as isize;
        let mut out = RealTensor::zeros(&[co, h, w]);
        for o in 0..co {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for i in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let yy = y as isize + ky as isize - pad;
                                let xx = x as isize + kx as isize - pad;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                acc += weight.data()[((o * c + i) * k + ky) * k + kx]
                                    * input.data()[(i * h + yy as usize) * w + xx as usize];
                            }
                        }
                    }
                    out.data_mut()[(o * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn same_padding_preserves_spatial_shape() {
        let x = RealTensor::zeros(&[1, 4, 8, 8]);
        let k = RealTensor::zeros(&[4, 4, 3, 3]);
        let y = conv2d_forward(&x, &k, None).unwrap();
        assert_eq!(y.shape(), &[1, 4, 8, 8]);
    }

    #[test]
    fn matches_literal_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[3, 5, 7], &mut rng);
        let k = random(&[2, 3, 3, 3], &mut rng);
        let fast = conv2d_forward(&x, &k, None).unwrap();
        let slow = naive(&x, &k);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn input_adjoint_satisfies_dot_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&[2, 3, 6, 5], &mut rng);
        let k = random(&[4, 3, 3, 3], &mut rng);
        let gy = random(&[2, 4, 6, 5], &mut rng);
        let y = conv2d_forward(&x, &k, None).unwrap();
        let gx = conv2d_backward_input(&gy, &k, x.shape()).unwrap();
        let lhs = y.dot(&gy);
        let rhs = x.dot(&gx);
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn kernel_gradient_satisfies_dot_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[3, 6, 6], &mut rng);
        let k = random(&[2, 3, 3, 3], &mut rng);
        let gy = random(&[2, 6, 6], &mut rng);
        let y = conv2d_forward(&x, &k, None).unwrap();
        let (gk, _) = conv2d_backward_params(&gy, &x, k.shape()).unwrap();
        // y is linear in k, so <y, gy> = <k, gk>
        assert!((y.dot(&gy) - k.dot(&gk)).abs() < 1e-10);
    }

    #[test]
    fn rejects_channel_mismatch_and_even_kernels() {
        let x = RealTensor::zeros(&[3, 4, 4]);
        assert!(conv2d_forward(&x, &RealTensor::zeros(&[2, 2, 3, 3]), None).is_err());
        assert!(conv2d_forward(&x, &RealTensor::zeros(&[2, 3, 2, 2]), None).is_err());
    }
}
