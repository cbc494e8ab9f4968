use std::cell::Cell;
use std::rc::Rc;
use std::sync::Arc;

use num_complex::Complex64;

use super::gradcheck::{input_gradient_error, param_gradient_error, DEFAULT_STEP};
use super::*;
use crate::error::Error;
use crate::nets::{ConvLayer, ProximalBlock, ResidualBlock};
use crate::physics::SensingModel;
use crate::tensor::{ComplexTensor, RealTensor, Value};
use crate::testutil::{problem, random_complex, random_real, rng};

const TOL: f64 = 1e-5;

/// Nonlinear scalar readout so linear ops get a non-trivial check.
fn readout<'t>(tape: &mut Tape<'t>, out: Var, weights: &ComplexTensor) -> crate::Result<Var> {
    let sq = tape.sq_norm(out)?;
    let lin = match tape.value(out) {
        Value::Complex(_) => {
            let w = tape.constant(weights.clone());
            let m = tape.mul(out, w)?;
            tape.sum_real(m)?
        }
        Value::Real(_) => tape.sum_real(out)?,
    };
    tape.add(sq, lin)
}

fn check_unary(input: Value, op: impl for<'t> Fn(&mut Tape<'t>, Var) -> crate::Result<Var>) -> f64 {
    let shape_probe = {
        let mut t = Tape::no_grad();
        let v = t.constant(input.clone());
        let o = op(&mut t, v).unwrap();
        t.value(o).shape().to_vec()
    };
    let w = random_complex(&shape_probe, &mut rng(99));
    input_gradient_error(&[input], DEFAULT_STEP, |t, v| {
        let o = op(t, v[0])?;
        readout(t, o, &w)
    })
    .unwrap()
}

#[test]
fn trivial_records() {
    let mut t = Tape::new();
    let a = t.input(RealTensor::zeros(&[2, 2]));
    let b = t.input(RealTensor::zeros(&[2, 2]));
    let s = t.add(a, b).unwrap();
    assert_eq!(t.real(s).unwrap(), &RealTensor::zeros(&[2, 2]));
    let one = t.input(RealTensor::full(&[3], 1.0));
    let two = t.scale(one, 2.0).unwrap();
    assert_eq!(t.real(two).unwrap().data(), &[2.0, 2.0, 2.0]);
    let x = t.input(RealTensor::zeros(&[1, 4, 8, 8]));
    let k = t.input(RealTensor::zeros(&[4, 4, 3, 3]));
    let y = t.conv2d(x, k, None).unwrap();
    assert_eq!(t.value(y).shape(), &[1, 4, 8, 8]);
}

#[test]
fn shape_mismatch_is_a_dimension_error() {
    let mut t = Tape::new();
    let a = t.input(RealTensor::zeros(&[2, 2]));
    let b = t.input(RealTensor::zeros(&[3]));
    assert!(matches!(t.add(a, b), Err(Error::Dimension(_))));
}

#[test]
fn real_part_of_sum_has_unit_gradient() {
    let x0 = random_complex(&[3, 4], &mut rng(1));
    let mut t = Tape::new();
    let x = t.input(x0);
    let s = t.sum_real(x).unwrap();
    let g = t.backward(s).unwrap();
    let gx = g.wrt(x).unwrap().as_complex().unwrap();
    assert!(gx.data().iter().all(|&c| c == Complex64::new(1.0, 0.0)));
}

#[test]
fn squared_norm_has_gradient_two_x() {
    let x0 = random_complex(&[5], &mut rng(2));
    let mut t = Tape::new();
    let x = t.input(x0.clone());
    let s = t.sq_norm(x).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap().as_complex().unwrap(), &x0.scale(2.0));
}

#[test]
fn backward_contract_errors() {
    let mut t = Tape::new();
    let x = t.input(random_complex(&[2], &mut rng(3)));
    assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    let s = t.sq_norm(x).unwrap();
    t.backward(s).unwrap();
    assert!(matches!(t.backward(s), Err(Error::Contract(_))));
    let mut ng = Tape::no_grad();
    let y = ng.constant(RealTensor::scalar(1.0));
    assert!(matches!(ng.backward(y), Err(Error::Contract(_))));
}

#[test]
fn fd_add_sub_scale() {
    let mut r = rng(4);
    let a = Value::Complex(random_complex(&[3, 4], &mut r));
    let b = Value::Complex(random_complex(&[3, 4], &mut r));
    let w = random_complex(&[3, 4], &mut r);
    for op in 0..3 {
        let e = input_gradient_error(&[a.clone(), b.clone()], DEFAULT_STEP, |t, v| {
            let o = match op {
                0 => t.add(v[0], v[1])?,
                1 => t.sub(v[0], v[1])?,
                _ => {
                    let s = t.scale(v[0], -1.7)?;
                    t.add(s, v[1])?
                }
            };
            readout(t, o, &w)
        })
        .unwrap();
        assert!(e < TOL, "op {op}: {e}");
    }
    let ra = Value::Real(random_real(&[6], &mut r));
    assert!(check_unary(ra, |t, x| t.scale(x, 0.3)) < TOL);
}

#[test]
fn fd_broadcast_mul() {
    let mut r = rng(5);
    let a = Value::Complex(random_complex(&[3, 4, 4], &mut r));
    let b = Value::Complex(random_complex(&[4, 4], &mut r));
    let w = random_complex(&[3, 4, 4], &mut r);
    let e = input_gradient_error(&[a, b], DEFAULT_STEP, |t, v| {
        let o = t.mul(v[1], v[0])?;
        readout(t, o, &w)
    })
    .unwrap();
    assert!(e < TOL, "{e}");
}

#[test]
fn fd_linear_operators() {
    let mut r = rng(6);
    let x = Value::Complex(random_complex(&[2, 4, 8], &mut r));
    assert!(check_unary(x.clone(), |t, v| t.sum_leading(v)) < TOL);
    assert!(check_unary(x.clone(), |t, v| t.fft2(v)) < TOL);
    assert!(check_unary(x.clone(), |t, v| t.ifft2(v)) < TOL);
    let mask = Arc::new(RealTensor::from_vec(&[4, 8], (0..32).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap());
    assert!(check_unary(x, move |t, v| t.mask(v, mask.clone())) < TOL);
    let img = Value::Complex(random_complex(&[4, 4], &mut r));
    assert!(check_unary(img, |t, v| t.to_channels(v)) < TOL);
    let ch = Value::Real(random_real(&[2, 4, 4], &mut r));
    assert!(check_unary(ch, |t, v| t.from_channels(v)) < TOL);
}

#[test]
fn fd_conv2d_all_arguments() {
    let mut r = rng(7);
    let x = Value::Real(random_real(&[2, 3, 5, 6], &mut r));
    let k = Value::Real(random_real(&[4, 3, 3, 3], &mut r));
    let b = Value::Real(random_real(&[4], &mut r));
    let e = input_gradient_error(&[x, k, b], DEFAULT_STEP, |t, v| {
        let o = t.conv2d(v[0], v[1], Some(v[2]))?;
        let q = t.sq_norm(o)?;
        let s = t.sum_real(o)?;
        t.add(q, s)
    })
    .unwrap();
    assert!(e < TOL, "{e}");
}

#[test]
fn fd_relu_l1_and_reductions() {
    let mut r = rng(8);
    let x = Value::Real(random_real(&[3, 7], &mut r));
    assert!(check_unary(x.clone(), |t, v| t.relu(v)) < TOL);
    assert!(check_unary(x, |t, v| t.sq_norm(v)) < TOL);
    let c = Value::Complex(random_complex(&[4, 4], &mut r));
    let target = random_complex(&[4, 4], &mut r);
    assert!(check_unary(c.clone(), |t, v| t.sum_real(v)) < TOL);
    let e = input_gradient_error(&[c], DEFAULT_STEP, |t, v| t.l1_complex(v[0], &target)).unwrap();
    assert!(e < TOL, "{e}");
}

#[test]
fn l1_values() {
    let target = random_complex(&[4, 4], &mut rng(9));
    let mut t = Tape::no_grad();
    let p = t.constant(target.clone());
    let z = t.l1_complex(p, &target).unwrap();
    assert_eq!(t.real(z).unwrap().data(), &[0.0]);
    let mut shifted = target.clone();
    shifted.data_mut()[5] += Complex64::new(3.0, 4.0);
    let q = t.constant(shifted);
    let l = t.l1_complex(q, &target).unwrap();
    assert!((t.real(l).unwrap().data()[0] - 5.0 / 16.0).abs() < 1e-15);
}

#[test]
fn fd_cg_solve_and_dc_step() {
    let (meas, _) = problem(10, 8, 0.8);
    let z = Value::Complex(random_complex(&[8, 8], &mut rng(11)));
    let model = meas.model.clone();
    let aty = meas.aty.clone();
    assert!(check_unary(z.clone(), move |t, v| t.cg_solve(v, model.clone(), &aty, 60)) < TOL);
    let model = meas.model.clone();
    let y = meas.kspace.clone();
    assert!(check_unary(z, move |t, v| {
        let yc = t.constant(y.clone());
        model.dc_step_var(t, v, yc)
    }) < TOL);
}

#[test]
fn fd_dc_step_wrt_measurements() {
    let (meas, _) = problem(12, 8, 1.0);
    let model: Arc<SensingModel> = meas.model.clone();
    let x = Value::Complex(random_complex(&[8, 8], &mut rng(13)));
    let y = Value::Complex(meas.kspace.clone());
    let e = input_gradient_error(&[x, y], DEFAULT_STEP, |t, v| {
        let o = model.dc_step_var(t, v[0], v[1])?;
        t.sq_norm(o)
    })
    .unwrap();
    assert!(e < TOL, "{e}");
}

#[derive(Clone)]
struct ThreeLayer {
    convs: Vec<ConvLayer>,
}

#[test]
fn fd_random_three_layer_net_parameters() {
    let mut r = rng(14);
    let net = ThreeLayer {
        convs: vec![
            ConvLayer::gaussian(2, 4, 3, 0.4, &mut r),
            ConvLayer::gaussian(4, 4, 3, 0.4, &mut r),
            ConvLayer::gaussian(4, 2, 3, 0.4, &mut r),
        ],
    };
    let x = random_real(&[2, 6, 6], &mut r);
    let target = random_complex(&[6, 6], &mut r);
    let e = param_gradient_error(
        &net,
        DEFAULT_STEP,
        |n: &mut ThreeLayer| n.convs.iter_mut().flat_map(|c| [&mut c.weight, &mut c.bias]).collect(),
        |t, n| {
            let mut h = t.constant(x.clone());
            for (i, c) in n.convs.iter().enumerate() {
                if i > 0 {
                    h = t.relu(h)?;
                }
                h = c.apply(t, h)?;
            }
            let img = t.from_channels(h)?;
            t.l1_complex(img, &target)
        },
    )
    .unwrap();
    assert!(e < TOL, "{e}");
}

fn prox(seed: u64) -> ProximalBlock {
    let mut r = rng(seed);
    ProximalBlock {
        blocks: (0..2)
            .map(|_| {
                ResidualBlock::new(vec![
                    ConvLayer::gaussian(2, 3, 3, 0.3, &mut r),
                    ConvLayer::gaussian(3, 2, 3, 0.3, &mut r),
                ])
                .unwrap()
            })
            .collect(),
    }
}

#[test]
fn checkpointed_identity_stores_only_its_input() {
    let x0 = random_complex(&[4, 4], &mut rng(15));
    let mut t = Tape::new();
    let x = t.input(x0.clone());
    let seg: Segment<'_> = Rc::new(|_t: &mut Tape<'_>, v: &[Var]| Ok(v[0]));
    let y = t.checkpoint(&[x], seg).unwrap();
    assert_eq!(t.complex(y).unwrap(), &x0);
    assert_eq!(t.meter().live(), 32);
}

#[test]
fn checkpointed_block_matches_plain_backward() {
    let block = prox(16);
    let x0 = random_complex(&[8, 8], &mut rng(17));
    let target = random_complex(&[8, 8], &mut rng(18));

    let plain = {
        let mut t = Tape::new();
        let x = t.input(x0.clone());
        let y = block.forward_var(&mut t, x).unwrap();
        let l = t.l1_complex(y, &target).unwrap();
        t.backward(l).unwrap()
    };
    let meter = ActivationMeter::new();
    let ckpt = {
        let mut t = Tape::with_meter(meter.clone());
        let x = t.input(x0.clone());
        let b = &block;
        let seg: Segment<'_> = Rc::new(move |t: &mut Tape<'_>, v: &[Var]| b.forward_var(t, v[0]));
        let y = t.checkpoint(&[x], seg).unwrap();
        let l = t.l1_complex(y, &target).unwrap();
        t.backward(l).unwrap()
    };
    assert_eq!(meter.live(), 0);
    for p in block.params() {
        let a = plain.param(p.id()).unwrap().to_real_pairs();
        let b = ckpt.param(p.id()).unwrap().to_real_pairs();
        let diff: f64 = a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = a.iter().map(|u| u * u).sum::<f64>().sqrt();
        assert!(diff <= 1e-8 * norm, "{diff} vs {norm}");
    }
}

#[test]
fn stateful_segment_is_rejected() {
    let calls = Cell::new(0.0);
    let mut t = Tape::new();
    let x = t.input(random_complex(&[4, 4], &mut rng(19)));
    let c = &calls;
    let seg: Segment<'_> = Rc::new(move |t: &mut Tape<'_>, v: &[Var]| {
        c.set(c.get() + 1.0);
        t.scale(v[0], c.get())
    });
    let y = t.checkpoint(&[x], seg).unwrap();
    let l = t.sq_norm(y).unwrap();
    assert!(matches!(t.backward(l), Err(Error::Contract(_))));
}

#[test]
fn peak_matches_schedule_and_live_returns_to_zero() {
    let (h, w, f) = (8, 8, 5);
    let hw = h * w;
    let mut r = rng(20);
    let c1 = ConvLayer::gaussian(2, f, 3, 0.3, &mut r);
    let c2 = ConvLayer::gaussian(f, 2, 3, 0.3, &mut r);
    let x0 = random_complex(&[h, w], &mut r);
    let target = random_complex(&[h, w], &mut r);
    let meter = ActivationMeter::new();
    let mut t = Tape::with_meter(meter.clone());
    let x = t.constant(x0);
    let ch = t.to_channels(x).unwrap();
    let a = c1.apply(&mut t, ch).unwrap(); // saves its 2-channel input
    let b = t.relu(a).unwrap(); // saves f-channel mask
    let c = c2.apply(&mut t, b).unwrap(); // saves f-channel input
    let img = t.from_channels(c).unwrap();
    let l = t.l1_complex(img, &target).unwrap(); // saves 2 words per pixel
    let expected = 2 * hw + f * hw + f * hw + 2 * hw;
    assert_eq!(meter.live(), expected);
    t.backward(l).unwrap();
    assert_eq!(meter.peak(), expected);
    assert_eq!(meter.live(), 0);
    assert!(meter.peak() >= meter.live());
}

#[test]
fn checkpointed_chain_peak_is_checkpoints_plus_one_segment() {
    let n = 4;
    let blocks: Vec<ProximalBlock> = (0..n).map(|i| prox(30 + i as u64)).collect();
    let x0 = random_complex(&[8, 8], &mut rng(21));
    let target = random_complex(&[8, 8], &mut rng(22));
    let hw = 64;
    // Per block: two residual blocks of conv(2->3), relu, conv(3->2).
    let per_block = 2 * (2 + 3 + 3) * hw;
    let loss = 2 * hw;
    let ckpt = 2 * hw;

    let plain = ActivationMeter::new();
    {
        let mut t = Tape::with_meter(plain.clone());
        let mut x = t.constant(x0.clone());
        for b in &blocks {
            x = b.forward_var(&mut t, x).unwrap();
        }
        let l = t.l1_complex(x, &target).unwrap();
        t.backward(l).unwrap();
    }
    assert_eq!(plain.peak(), n * per_block + loss);

    let meter = ActivationMeter::new();
    {
        let mut t = Tape::with_meter(meter.clone());
        let mut x = t.constant(x0.clone());
        for b in &blocks {
            let seg: Segment<'_> = Rc::new(move |t: &mut Tape<'_>, v: &[Var]| b.forward_var(t, v[0]));
            x = t.checkpoint(&[x], seg).unwrap();
        }
        let l = t.l1_complex(x, &target).unwrap();
        t.backward(l).unwrap();
    }
    assert_eq!(meter.peak(), n * ckpt + per_block.max(loss));
    assert!(meter.peak() < plain.peak());
    assert_eq!(meter.live(), 0);
}
