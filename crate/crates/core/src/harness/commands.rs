use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, RunManifest};
use crate::cs::{cs_reconstruct, CsConfig};
use crate::data::{evaluate, inference_sweep, Dataset, MetricSet, Split, Summary, SweepRow};
use crate::error::{Error, Result};
use crate::nets::{NetKind, Snapshot, UnrolledNetwork};
use crate::train::{train_partial, Strategy, TrainConfig, TrainReport, TrainState};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(name)).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(header).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn split_path(cfg: &ExperimentConfig, split: Split) -> PathBuf {
    cfg.data_dir().join(format!("{}.bin", split.name()))
}

/// Generated splits plus achieved acceleration per split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub counts: Vec<(Split, usize)>,
    pub achieved_acceleration: Vec<(Split, f64)>,
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<(GenerateSummary, RunManifest)> {
    cfg.validate()?;
    let dir = cfg.data_dir();
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("generate", cfg);
    let mut summary = GenerateSummary {
        counts: Vec::new(),
        achieved_acceleration: Vec::new(),
    };
    for split in Split::ALL {
        let d = Dataset::generate(&cfg.dataset, &cfg.sensing, split)?;
        let name = format!("{}.bin", split.name());
        d.write(&dir.join(&name))?;
        manifest.add(&dir, &name)?;
        summary.counts.push((split, d.len()));
        summary.achieved_acceleration.push((split, d.achieved_acceleration()));
    }
    write_json(&dir, "splits.json", &summary)?;
    manifest.add(&dir, "splits.json")?;
    manifest.write(&dir)?;
    Ok((summary, manifest))
}

/// Read a generated split and check it belongs to this config.
pub fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<Dataset> {
    let path = split_path(cfg, split);
    if !path.exists() {
        return Err(Error::config(format!(
            "dataset split {} not found; run `generate` first",
            path.display()
        )));
    }
    let d = Dataset::read(&path)?;
    if d.spec != cfg.dataset || d.sensing != cfg.sensing || d.split != split {
        return Err(Error::config(format!(
            "{} was generated from a different dataset/sensing config",
            path.display()
        )));
    }
    Ok(d)
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub state: TrainState,
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

/// Train per `cfg.train`, optionally resuming from a snapshot. Writes
/// `report.json`, `timing.json`, `snapshot.bin` and the manifest. After a
/// numeric failure the partial report is still written before the error
/// is returned.
pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = load_split(cfg, Split::Train)?;
    let val_set = load_split(cfg, Split::Val)?;
    let mut state = match resume {
        Some(path) => {
            let state = TrainState::from_snapshot(&Snapshot::read(path)?)?;
            if state.net.spec != cfg.network {
                return Err(Error::config("snapshot network does not match the config"));
            }
            state
        }
        None => TrainState::new(UnrolledNetwork::new(cfg.network.clone())?, cfg.train.adam),
    };
    let (report, failure) = train_partial(&mut state, &train_set.items, &val_set.items, &cfg.train)?;
    let dir = cfg.run_dir();
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("train", cfg);
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    write_json(&dir, "timing.json", &report.timing)?;
    state.to_snapshot()?.write(&dir.join("snapshot.bin"))?;
    for name in ["report.json", "snapshot.bin"] {
        manifest.add(&dir, name)?;
    }
    manifest.unhashed.push("timing.json".into());
    manifest.write(&dir)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(TrainOutcome {
        report,
        state,
        dir,
        manifest,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: Split,
    pub psnr: Summary,
    pub ssim: Summary,
    pub nrmse: Summary,
    pub per_item: MetricSet,
}

impl MetricReport {
    fn new(split: Split, m: MetricSet) -> Self {
        Self {
            split,
            psnr: m.mean_psnr(),
            ssim: m.mean_ssim(),
            nrmse: m.mean_nrmse(),
            per_item: m,
        }
    }

    fn rows(&self) -> Vec<Vec<String>> {
        [("psnr", self.psnr), ("ssim", self.ssim), ("nrmse", self.nrmse)]
            .iter()
            .map(|(n, s)| vec![n.to_string(), s.mean.to_string(), s.std.to_string(), s.to_string()])
            .collect()
    }
}

fn write_metrics(dir: &Path, report: &MetricReport, manifest: &mut RunManifest) -> Result<()> {
    write_json(dir, "metrics.json", report)?;
    write_csv(dir, "metrics.csv", &["metric", "mean", "std", "mean_std"], &report.rows())?;
    manifest.add(dir, "metrics.json")?;
    manifest.add(dir, "metrics.csv")
}

fn write_sweep(dir: &Path, rows: &[SweepRow], manifest: &mut RunManifest) -> Result<()> {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.n_inf.to_string(), r.psnr.mean.to_string(), r.psnr.std.to_string()])
        .collect();
    write_csv(dir, "sweep.csv", &["n_inf", "psnr_mean", "psnr_std"], &table)?;
    manifest.add(dir, "sweep.csv")
}

fn load_network(snapshot: &Path) -> Result<UnrolledNetwork> {
    Snapshot::read(snapshot)?.to_network()
}

pub struct EvalOutcome {
    pub metrics: MetricReport,
    pub sweep: Option<Vec<SweepRow>>,
    pub dir: PathBuf,
}

/// Evaluate a snapshot on `split`; with `sweep`, also every `n_inf`.
pub fn cmd_eval(cfg: &ExperimentConfig, snapshot: &Path, split: Split, sweep: bool) -> Result<EvalOutcome> {
    let data = load_split(cfg, split)?;
    let net = load_network(snapshot)?;
    let metrics = MetricReport::new(split, evaluate(&net, &data.items)?);
    let dir = cfg.output_dir.join("eval").join(split.name());
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("eval", cfg);
    write_metrics(&dir, &metrics, &mut manifest)?;
    let sweep = if sweep {
        let rows = inference_sweep(&net, &data.items)?;
        write_sweep(&dir, &rows, &mut manifest)?;
        Some(rows)
    } else {
        None
    };
    manifest.write(&dir)?;
    Ok(EvalOutcome { metrics, sweep, dir })
}

pub fn cmd_sweep(cfg: &ExperimentConfig, snapshot: &Path, split: Split) -> Result<Vec<SweepRow>> {
    let data = load_split(cfg, split)?;
    let net = load_network(snapshot)?;
    let rows = inference_sweep(&net, &data.items)?;
    let dir = cfg.output_dir.join("sweep").join(split.name());
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("sweep", cfg);
    write_sweep(&dir, &rows, &mut manifest)?;
    manifest.write(&dir)?;
    Ok(rows)
}

/// Mean CS PSNR over `data` for each candidate `lambda`, best first.
pub fn tune_lambda(data: &Dataset, base: CsConfig, candidates: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut scored = Vec::with_capacity(candidates.len());
    for &lambda in candidates {
        let cfg = CsConfig { lambda, ..base };
        let mut total = 0.0;
        for s in &data.items {
            let x = cs_reconstruct(&s.meas.model, &s.meas.kspace, &cfg)?.image;
            total += crate::data::psnr(&s.target, &x)?;
        }
        scored.push((lambda, total / data.len().max(1) as f64));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored)
}

/// Geometric grid of `lambda` candidates used when tuning.
pub const LAMBDA_GRID: [f64; 9] = [2.5e-4, 5e-4, 1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2, 3.2e-2, 6.4e-2];

pub struct CsOutcome {
    pub metrics: MetricReport,
    pub lambda: f64,
    pub tuning: Vec<(f64, f64)>,
}

/// CS baseline on `split`. With `tune`, `lambda` is chosen on the
/// validation split from [`LAMBDA_GRID`]; otherwise `cfg.cs` is used.
pub fn cmd_cs(cfg: &ExperimentConfig, split: Split, tune: bool) -> Result<CsOutcome> {
    let base = cfg
        .cs
        .ok_or_else(|| Error::config("the `cs` section is required for the CS baseline"))?;
    base.validate()?;
    let tuning = if tune {
        tune_lambda(&load_split(cfg, Split::Val)?, base, &LAMBDA_GRID)?
    } else {
        Vec::new()
    };
    let lambda = tuning.first().map_or(base.lambda, |t| t.0);
    let cs_cfg = CsConfig { lambda, ..base };
    let data = load_split(cfg, split)?;
    let mut m = MetricSet::default();
    for s in &data.items {
        m.push(&s.target, &cs_reconstruct(&s.meas.model, &s.meas.kspace, &cs_cfg)?.image)?;
    }
    let metrics = MetricReport::new(split, m);
    let dir = cfg.output_dir.join("cs").join(split.name());
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("cs", cfg);
    write_metrics(&dir, &metrics, &mut manifest)?;
    write_json(&dir, "lambda.json", &serde_json::json!({ "lambda": lambda, "tuning": tuning }))?;
    manifest.add(&dir, "lambda.json")?;
    manifest.write(&dir)?;
    Ok(CsOutcome { metrics, lambda, tuning })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub strategy: Strategy,
    pub workers: usize,
    pub peak_activation_elements: usize,
    pub analytic_peak: usize,
    pub seconds_per_iteration: f64,
    /// Forward and backward seconds per iteration; absent when they
    /// overlap.
    pub forward: Option<f64>,
    pub backward: Option<f64>,
}

/// Train every strategy for `steps` iterations from the same
/// initialization and tabulate memory and time. MEL needs an invertible
/// MoDL network, so the benchmark network is made invertible when it is
/// MoDL; on PGD the MEL row is skipped.
pub fn cmd_benchmark(cfg: &ExperimentConfig, steps: usize, workers: &[usize]) -> Result<Vec<BenchmarkRow>> {
    let mut spec = cfg.network.clone();
    if spec.kind == NetKind::Modl {
        spec.invertible = true;
    }
    let data = load_split(cfg, Split::Train)?;
    let net = UnrolledNetwork::new(spec.clone())?;
    let mut rows = Vec::new();
    let mut runs: Vec<(Strategy, usize)> = Strategy::ALL.iter().map(|&s| (s, 1)).collect();
    runs.extend(workers.iter().filter(|&&d| d > 1).map(|&d| (Strategy::Gleam, d)));
    for (strategy, d) in runs {
        if strategy == Strategy::Mel && spec.kind != NetKind::Modl {
            log::warn!("skipping mel: it needs an invertible MoDL network");
            continue;
        }
        let tc = TrainConfig {
            strategy,
            workers: d,
            iterations: steps,
            eval_every: 0,
            n_cp: None,
            ..cfg.train.clone()
        };
        let mut state = TrainState::new(net.clone(), tc.adam);
        let (report, failure) = train_partial(&mut state, &data.items, &[], &tc)?;
        if let Some(e) = failure {
            return Err(e);
        }
        let t = &report.timing;
        let per = |v: f64| v / steps.max(1) as f64;
        rows.push(BenchmarkRow {
            strategy,
            workers: d,
            peak_activation_elements: report.peak_activation_elements,
            analytic_peak: report.analytic_peak,
            seconds_per_iteration: t.per_iteration(steps),
            forward: (!t.merged).then(|| per(t.forward)),
            backward: (!t.merged).then(|| per(t.backward)),
        });
    }
    let dir = cfg.output_dir.join("benchmark");
    create_dir(&dir)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.strategy.name().to_string(),
                r.workers.to_string(),
                r.peak_activation_elements.to_string(),
                r.analytic_peak.to_string(),
                format!("{:.6}", r.seconds_per_iteration),
                opt(r.forward),
                opt(r.backward),
            ]
        })
        .collect();
    write_csv(
        &dir,
        "benchmark.csv",
        &["strategy", "workers", "peak_activation_elements", "analytic_peak", "seconds_per_iteration", "forward", "backward"],
        &table,
    )?;
    write_json(&dir, "benchmark.json", &rows)?;
    let mut manifest = RunManifest::new("benchmark", cfg);
    manifest.unhashed = vec!["benchmark.csv".into(), "benchmark.json".into()];
    manifest.write(&dir)?;
    Ok(rows)
}

/// Process exit code for an error: 2 for configuration problems, 3 for
/// numeric failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        e if e.is_numeric() => 3,
        _ => 1,
    }
}
