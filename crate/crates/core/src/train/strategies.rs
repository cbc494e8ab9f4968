use std::collections::BTreeMap;
use std::rc::Rc;
use std::time::Instant;

use super::adam::Adam;
use super::config::{Strategy, TrainConfig};
use super::report::TrainReport;
use super::{batch_indices, mean_psnr, Sample};
use crate::autodiff::{ActivationMeter, Gradients, Segment, Tape, Var};
use crate::error::{Error, Result};
use crate::nets::{invert_iteration, iteration_var, InversionSettings, NetKind, NetModule, NetworkSpec, ProximalBlock, UnrolledNetwork};
use crate::tensor::ComplexTensor;

/// One unrolled iteration with the settings of the module that owns it.
#[derive(Clone, Copy)]
struct Stage<'n> {
    kind: NetKind,
    cg_iters: usize,
    block: &'n ProximalBlock,
}

fn stages(modules: &[NetModule]) -> Vec<Stage<'_>> {
    modules
        .iter()
        .flat_map(|m| {
            m.blocks.iter().map(move |b| Stage {
                kind: m.kind,
                cg_iters: m.cg_iters,
                block: b,
            })
        })
        .collect()
}

/// Mean over the batch of the per-item complex l1 loss.
fn batch_loss(tape: &mut Tape<'_>, xs: &[Var], batch: &[&Sample]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (x, s) in xs.iter().zip(batch) {
        let l = tape.l1_complex(*x, &s.target)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::config("empty mini-batch"))?;
    tape.scale(total, 1.0 / batch.len() as f64)
}

fn scalar(tape: &Tape<'_>, v: Var) -> Result<f64> {
    Ok(tape.real(v)?.data()[0])
}

fn guard(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            detail: format!("loss became {loss}"),
        })
    }
}

/// Forward through `stages`, iteration-major across the batch.
fn forward_stages<'t>(tape: &mut Tape<'t>, stages: &[Stage<'_>], mut xs: Vec<Var>, batch: &[&Sample]) -> Result<Vec<Var>> {
    for st in stages {
        for (x, s) in xs.iter_mut().zip(batch) {
            *x = iteration_var(tape, st.kind, st.cg_iters, st.block, *x, &s.meas)?;
        }
    }
    Ok(xs)
}

fn forward_value(stage: &Stage<'_>, x: &ComplexTensor, s: &Sample) -> Result<ComplexTensor> {
    let mut tape = Tape::no_grad();
    let v = tape.constant(x.clone());
    let out = iteration_var(&mut tape, stage.kind, stage.cg_iters, stage.block, v, &s.meas)?;
    Ok(tape.complex(out)?.clone())
}

/// Wall-clock and bookkeeping from one gradient computation.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepStats {
    pub loss: f64,
    pub forward: f64,
    pub backward: f64,
    pub inversion: f64,
    pub fallbacks: usize,
}

/// Input indices at which MEL keeps a copy: `|Q| = min(n_cp, N)` evenly
/// spaced positions starting at the first iteration.
pub fn mel_checkpoint_positions(n: usize, n_cp: usize) -> Vec<usize> {
    let q = n_cp.min(n);
    (0..q).map(|i| i * n / q).collect()
}

/// Whole-network gradients of the batch loss under e2e, checkpointing or
/// MEL. Activation counts go to `meter`.
pub fn batch_gradients(
    modules: &[NetModule],
    batch: &[&Sample],
    cfg: &TrainConfig,
    spec: &NetworkSpec,
    meter: &ActivationMeter,
) -> Result<(Gradients, StepStats)> {
    match cfg.strategy {
        Strategy::E2eBp | Strategy::Gleam => e2e_gradients(modules, batch, meter),
        Strategy::Checkpointing => checkpointed_gradients(modules, batch, cfg.checkpoints(spec), meter),
        Strategy::Mel => mel_gradients(modules, batch, cfg.checkpoints(spec), meter),
    }
}

fn e2e_gradients(modules: &[NetModule], batch: &[&Sample], meter: &ActivationMeter) -> Result<(Gradients, StepStats)> {
    let st = stages(modules);
    let mut stats = StepStats::default();
    let t0 = Instant::now();
    let mut tape = Tape::with_meter(meter.clone());
    let xs: Vec<Var> = batch.iter().map(|s| tape.constant(s.meas.aty.clone())).collect();
    let xs = forward_stages(&mut tape, &st, xs, batch)?;
    let loss = batch_loss(&mut tape, &xs, batch)?;
    stats.loss = scalar(&tape, loss)?;
    stats.forward = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let grads = tape.backward(loss)?;
    stats.backward = t1.elapsed().as_secs_f64();
    Ok((grads, stats))
}

fn checkpointed_gradients(
    modules: &[NetModule],
    batch: &[&Sample],
    n_cp: usize,
    meter: &ActivationMeter,
) -> Result<(Gradients, StepStats)> {
    let st = stages(modules);
    let per = st.len() / n_cp;
    let mut stats = StepStats::default();
    let t0 = Instant::now();
    let mut tape = Tape::with_meter(meter.clone());
    let mut xs: Vec<Var> = batch.iter().map(|s| tape.constant(s.meas.aty.clone())).collect();
    for seg in st.chunks(per) {
        for (x, s) in xs.iter_mut().zip(batch) {
            let meas = &s.meas;
            let segment: Segment<'_> = Rc::new(move |t: &mut Tape<'_>, v: &[Var]| {
                let mut h = v[0];
                for stg in seg {
                    h = iteration_var(t, stg.kind, stg.cg_iters, stg.block, h, meas)?;
                }
                Ok(h)
            });
            *x = tape.checkpoint(&[*x], segment)?;
        }
    }
    let loss = batch_loss(&mut tape, &xs, batch)?;
    stats.loss = scalar(&tape, loss)?;
    stats.forward = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let grads = tape.backward(loss)?;
    stats.backward = t1.elapsed().as_secs_f64();
    Ok((grads, stats))
}

fn mel_gradients(
    modules: &[NetModule],
    batch: &[&Sample],
    n_cp: usize,
    meter: &ActivationMeter,
) -> Result<(Gradients, StepStats)> {
    let st = stages(modules);
    let n = st.len();
    let positions = mel_checkpoint_positions(n, n_cp);
    let image_words = 2 * batch[0].target.len();
    let mut stats = StepStats::default();
    let settings = InversionSettings::default();

    // Forward without a graph, keeping the output and the checkpoints.
    let t0 = Instant::now();
    let mut stored: Vec<BTreeMap<usize, ComplexTensor>> = Vec::with_capacity(batch.len());
    let mut outputs = Vec::with_capacity(batch.len());
    for s in batch {
        let mut keep = BTreeMap::new();
        let mut x = s.meas.aty.clone();
        for (j, stg) in st.iter().enumerate() {
            if positions.contains(&j) {
                keep.insert(j, x.clone());
            }
            x = forward_value(stg, &x, s)?;
        }
        stored.push(keep);
        outputs.push(x);
    }
    let held = batch.len() * (1 + positions.len()) * image_words;
    meter.hold(held);

    let result = (|| -> Result<(Gradients, StepStats)> {
        let (cotangents, _) = {
            let mut tape = Tape::with_meter(meter.clone());
            let xs: Vec<Var> = outputs.iter().map(|x| tape.input(x.clone())).collect();
            let loss = batch_loss(&mut tape, &xs, batch)?;
            stats.loss = scalar(&tape, loss)?;
            stats.forward = t0.elapsed().as_secs_f64();
            let g = tape.backward(loss)?;
            let cots = xs
                .iter()
                .map(|v| Ok(g.wrt(*v).ok_or_else(|| Error::Contract("missing output cotangent".into()))?.as_complex()?.clone()))
                .collect::<Result<Vec<_>>>()?;
            (cots, stats.loss)
        };
        let t1 = Instant::now();
        let mut grads = Gradients::default();
        for (i, s) in batch.iter().enumerate() {
            let mut current = outputs[i].clone();
            let mut cot = cotangents[i].clone();
            for j in (0..n).rev() {
                let input = match stored[i].get(&j) {
                    Some(x) => x.clone(),
                    None => {
                        let ti = Instant::now();
                        let inverted = invert_iteration(st[j].kind, st[j].block, &current, &s.meas, settings);
                        stats.inversion += ti.elapsed().as_secs_f64();
                        match inverted {
                            Ok(x) => x,
                            Err(Error::InversionFailed { iterations, residual, .. }) => {
                                let Some((&q, start)) = stored[i].range(..j).next_back() else {
                                    return Err(Error::InversionFailed {
                                        iterations,
                                        residual,
                                        hint: format!(
                                            "iteration {} could not be inverted and no checkpoint precedes it; increase N_cp (currently {})",
                                            j + 1,
                                            positions.len()
                                        ),
                                    });
                                };
                                stats.fallbacks += 1;
                                let mut x = start.clone();
                                for stg in &st[q..j] {
                                    x = forward_value(stg, &x, s)?;
                                }
                                x
                            }
                            Err(e) => return Err(e),
                        }
                    }
                };
                // Local graph of iteration j seeded with the incoming cotangent.
                let mut tape = Tape::with_meter(meter.clone());
                let v = tape.input(input.clone());
                let out = iteration_var(&mut tape, st[j].kind, st[j].cg_iters, st[j].block, v, &s.meas)?;
                let seed = tape.constant(cot.conj());
                let inner = tape.mul(out, seed)?;
                let root = tape.sum_real(inner)?;
                let local = tape.backward(root)?;
                cot = local
                    .wrt(v)
                    .ok_or_else(|| Error::Contract("missing input cotangent".into()))?
                    .as_complex()?
                    .clone();
                grads.merge(local)?;
                current = input;
            }
        }
        stats.backward = t1.elapsed().as_secs_f64();
        Ok((grads, stats))
    })();
    meter.release(held);
    result
}

/// GLEAM gradients of module `m` alone: its input is detached, its loss
/// is taken against the same targets. Returns the gradients and the
/// module output computed with the pre-update parameters.
pub fn gleam_step_gradients(
    module: &NetModule,
    inputs: &[ComplexTensor],
    batch: &[&Sample],
    meter: &ActivationMeter,
) -> Result<(Gradients, Vec<ComplexTensor>, StepStats)> {
    let st = stages(std::slice::from_ref(module));
    let mut stats = StepStats::default();
    let t0 = Instant::now();
    let mut tape = Tape::with_meter(meter.clone());
    let xs: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let xs = forward_stages(&mut tape, &st, xs, batch)?;
    let loss = batch_loss(&mut tape, &xs, batch)?;
    stats.loss = scalar(&tape, loss)?;
    let outputs = xs.iter().map(|v| Ok(tape.complex(*v)?.clone())).collect::<Result<Vec<_>>>()?;
    stats.forward = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let grads = tape.backward(loss)?;
    stats.backward = t1.elapsed().as_secs_f64();
    Ok((grads, outputs, stats))
}

pub(super) fn update_module(module: &mut NetModule, opt: &mut Adam, grads: &Gradients, bound: Option<f64>) -> Result<()> {
    opt.step(&mut module.params_mut(), grads)?;
    if let Some(b) = bound {
        module.enforce_lipschitz(b);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub(super) fn run_serial(
    modules: &mut [NetModule],
    opts: &mut [Adam],
    spec: &NetworkSpec,
    data: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    start_step: usize,
    report: &mut TrainReport,
) -> Result<()> {
    let meter = ActivationMeter::new();
    let bound = spec.invertible.then_some(spec.lipschitz_bound);
    let traces = if cfg.strategy == Strategy::Gleam { modules.len() } else { 1 };
    report.losses = vec![Vec::with_capacity(cfg.iterations); traces];
    let clock = Instant::now();
    let outcome = (|| -> Result<()> {
        for it in 0..cfg.iterations {
            let step = start_step + it;
            let idx = batch_indices(data.len(), cfg.batch_size, step, cfg.seed);
            let batch: Vec<&Sample> = idx.iter().map(|&i| &data[i]).collect();
            if cfg.strategy == Strategy::Gleam {
                let mut xs: Vec<ComplexTensor> = batch.iter().map(|s| s.meas.aty.clone()).collect();
                for (m, (module, opt)) in modules.iter_mut().zip(opts.iter_mut()).enumerate() {
                    let (grads, out, stats) = gleam_step_gradients(module, &xs, &batch, &meter)?;
                    guard(step, stats.loss)?;
                    report.losses[m].push(stats.loss);
                    report.timing.forward += stats.forward;
                    report.timing.backward += stats.backward;
                    update_module(module, opt, &grads, bound)?;
                    xs = out;
                }
            } else {
                let (grads, stats) = batch_gradients(modules, &batch, cfg, spec, &meter)?;
                guard(step, stats.loss)?;
                report.losses[0].push(stats.loss);
                report.timing.forward += stats.forward;
                report.timing.backward += stats.backward;
                report.timing.inversion += stats.inversion;
                report.inversion_fallbacks += stats.fallbacks;
                for (module, opt) in modules.iter_mut().zip(opts.iter_mut()) {
                    update_module(module, opt, &grads, bound)?;
                }
            }
            report.peak_activation_elements = meter.peak();
            if cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0 && (it + 1) < cfg.iterations && !val.is_empty() {
                let net = UnrolledNetwork::from_modules(spec.clone(), modules.to_vec())?;
                report.validation_psnr.push((step + 1, mean_psnr(&net, val)?));
            }
            log::debug!("{} step {} loss {:?}", cfg.strategy.name(), step, report.final_loss());
        }
        Ok(())
    })();
    report.timing.total = clock.elapsed().as_secs_f64();
    outcome
}

