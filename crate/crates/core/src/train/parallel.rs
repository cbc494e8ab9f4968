//! P-GLEAM: modules are dealt round-robin to `D` worker threads. Module
//! `m` of step `s` starts as soon as module `m - 1` of step `s` has sent
//! its (pre-update) output, so up to `D` modules run at once.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Instant;

use super::adam::Adam;
use super::config::TrainConfig;
use super::report::TrainReport;
use super::strategies::{gleam_step_gradients, update_module};
use super::{batch_indices, Sample};
use crate::autodiff::ActivationMeter;
use crate::error::{Error, Result};
use crate::nets::NetModule;
use crate::tensor::ComplexTensor;

type Activations = Vec<ComplexTensor>;

struct Slot<'a> {
    index: usize,
    module: &'a mut NetModule,
    opt: &'a mut Adam,
    input: Option<Receiver<Activations>>,
    output: Option<Sender<Activations>>,
}

struct WorkerResult {
    losses: Vec<(usize, Vec<f64>)>,
    peak: usize,
    error: Option<Error>,
}

fn work(mut slots: Vec<Slot<'_>>, data: &[Sample], cfg: &TrainConfig, start: usize, bound: Option<f64>) -> WorkerResult {
    let meter = ActivationMeter::new();
    let mut losses: Vec<(usize, Vec<f64>)> = slots.iter().map(|s| (s.index, Vec::new())).collect();
    let mut error = None;
    'steps: for it in 0..cfg.iterations {
        let step = start + it;
        let idx = batch_indices(data.len(), cfg.batch_size, step, cfg.seed);
        let batch: Vec<&Sample> = idx.iter().map(|&i| &data[i]).collect();
        for (slot, trace) in slots.iter_mut().zip(losses.iter_mut()) {
            let inputs = match &slot.input {
                None => batch.iter().map(|s| s.meas.aty.clone()).collect(),
                Some(rx) => match rx.recv() {
                    Ok(x) => x,
                    Err(_) => {
                        error = Some(Error::Worker(format!(
                            "module {} lost its upstream at step {step}",
                            slot.index + 1
                        )));
                        break 'steps;
                    }
                },
            };
            let result = gleam_step_gradients(slot.module, &inputs, &batch, &meter).and_then(|(grads, out, stats)| {
                if !stats.loss.is_finite() {
                    return Err(Error::Divergence {
                        step,
                        detail: format!("module {} loss became {}", slot.index + 1, stats.loss),
                    });
                }
                if let Some(tx) = &slot.output {
                    tx.send(out).map_err(|_| Error::Worker(format!("module {} downstream hung up", slot.index + 1)))?;
                }
                update_module(slot.module, slot.opt, &grads, bound)?;
                Ok(stats.loss)
            });
            match result {
                Ok(loss) => trace.1.push(loss),
                Err(e) => {
                    error = Some(e);
                    break 'steps;
                }
            }
        }
    }
    WorkerResult {
        losses,
        peak: meter.peak(),
        error,
    }
}

pub(super) fn run(
    modules: &mut [NetModule],
    opts: &mut [Adam],
    data: &[Sample],
    cfg: &TrainConfig,
    start_step: usize,
    bound: Option<f64>,
    report: &mut TrainReport,
) -> Result<()> {
    let d = cfg.workers;
    let m = modules.len();
    let (mut senders, mut receivers): (Vec<Option<Sender<Activations>>>, Vec<Option<Receiver<Activations>>>) =
        (Vec::new(), vec![None]);
    for _ in 1..m {
        let (tx, rx) = channel();
        senders.push(Some(tx));
        receivers.push(Some(rx));
    }
    senders.push(None);

    let mut per_worker: Vec<Vec<Slot<'_>>> = (0..d).map(|_| Vec::new()).collect();
    for (i, ((module, opt), (input, output))) in modules
        .iter_mut()
        .zip(opts.iter_mut())
        .zip(receivers.into_iter().zip(senders))
        .enumerate()
    {
        per_worker[i % d].push(Slot {
            index: i,
            module,
            opt,
            input,
            output,
        });
    }

    let clock = Instant::now();
    let results: Vec<WorkerResult> = std::thread::scope(|scope| {
        let handles: Vec<_> = per_worker
            .into_iter()
            .map(|slots| scope.spawn(move || work(slots, data, cfg, start_step, bound)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join().unwrap_or_else(|_| WorkerResult {
                    losses: Vec::new(),
                    peak: 0,
                    error: Some(Error::Worker("worker thread panicked".into())),
                })
            })
            .collect()
    });
    report.timing.total = clock.elapsed().as_secs_f64();
    report.timing.merged = true;

    report.losses = vec![Vec::new(); m];
    let mut errors = Vec::new();
    for r in results {
        report.peak_activation_elements += r.peak;
        for (i, trace) in r.losses {
            report.losses[i] = trace;
        }
        errors.extend(r.error);
    }
    // Hung-up channels are consequences; report the root cause.
    match errors.iter().position(|e| !matches!(e, Error::Worker(_))) {
        Some(i) => Err(errors.swap_remove(i)),
        None => errors.into_iter().next().map_or(Ok(()), Err),
    }
}
