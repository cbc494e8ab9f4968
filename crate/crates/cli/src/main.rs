use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use unroll_core::data::Split;
use unroll_core::harness::{
    cmd_benchmark, cmd_cs, cmd_eval, cmd_generate, cmd_sweep, cmd_train, exit_code, ExperimentConfig,
};
use unroll_core::train::Strategy;
use unroll_core::{Error, Result};

#[derive(Parser)]
#[command(name = "unroll", version, about = "Train and evaluate unrolled MRI reconstruction networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

/// Overrides for `TrainConfig`, one flag per field.
#[derive(Args, Default)]
struct TrainFlags {
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Comma-separated per-module learning rates.
    #[arg(long, value_delimiter = ',')]
    module_lr: Option<Vec<f64>>,
    #[arg(long)]
    n_cp: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train, val and test splits.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a network with the configured strategy.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        /// Continue from a parameter snapshot.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Reconstruction metrics of a trained snapshot.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Also evaluate every truncated depth.
        #[arg(long)]
        sweep: bool,
    },
    /// Peak activation memory and time per iteration of every strategy.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        /// Extra P-GLEAM worker counts, comma-separated.
        #[arg(long, value_delimiter = ',')]
        workers: Vec<usize>,
    },
    /// Compressed-sensing baseline.
    Cs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        step: Option<f64>,
        /// Choose lambda on the validation split.
        #[arg(long)]
        tune: bool,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// PSNR at every inference depth.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn apply(cfg: &mut ExperimentConfig, f: TrainFlags) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(v) = f.strategy {
        t.strategy = v;
    }
    if let Some(v) = f.workers {
        t.workers = v;
    }
    if let Some(v) = f.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = f.iterations {
        t.iterations = v;
    }
    if let Some(v) = f.lr {
        t.adam.lr = v;
    }
    if let Some(v) = f.beta1 {
        t.adam.beta1 = v;
    }
    if let Some(v) = f.beta2 {
        t.adam.beta2 = v;
    }
    if let Some(v) = f.eps {
        t.adam.eps = v;
    }
    if f.module_lr.is_some() {
        t.module_lr = f.module_lr;
    }
    if f.n_cp.is_some() {
        t.n_cp = f.n_cp;
    }
    if let Some(v) = f.eval_every {
        t.eval_every = v;
    }
    if let Some(v) = f.seed {
        t.seed = v;
    }
    cfg.validate()
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let (summary, _) = cmd_generate(&load(&common)?)?;
            print_json(&summary)
        }
        Command::Train { common, train, resume } => {
            let mut cfg = load(&common)?;
            apply(&mut cfg, train)?;
            let out = cmd_train(&cfg, resume.as_deref())?;
            log::info!("wrote {}", out.dir.display());
            println!(
                "{} steps, final loss {:?}, peak activations {}",
                out.report.iterations,
                out.report.final_loss(),
                out.report.peak_activation_elements
            );
            Ok(())
        }
        Command::Eval {
            common,
            snapshot,
            split,
            sweep,
        } => {
            let out = cmd_eval(&load(&common)?, &snapshot, split.into(), sweep)?;
            let m = &out.metrics;
            println!("PSNR {}  SSIM {}  nRMSE {}", m.psnr, m.ssim, m.nrmse);
            for row in out.sweep.iter().flatten() {
                println!("n_inf {:>3}  PSNR {}", row.n_inf, row.psnr);
            }
            Ok(())
        }
        Command::Benchmark { common, steps, workers } => print_json(&cmd_benchmark(&load(&common)?, steps, &workers)?),
        Command::Cs {
            common,
            lambda,
            iterations,
            levels,
            step,
            tune,
            split,
        } => {
            let mut cfg = load(&common)?;
            let cs = cfg.cs.get_or_insert_with(|| unroll_core::cs::CsConfig::new(0.001));
            if let Some(v) = lambda {
                cs.lambda = v;
            }
            if let Some(v) = iterations {
                cs.iterations = v;
            }
            if let Some(v) = levels {
                cs.levels = v;
            }
            if let Some(v) = step {
                cs.step = v;
            }
            cfg.validate()?;
            let out = cmd_cs(&cfg, split.into(), tune)?;
            let m = &out.metrics;
            println!("lambda {}  PSNR {}  SSIM {}  nRMSE {}", out.lambda, m.psnr, m.ssim, m.nrmse);
            Ok(())
        }
        Command::Sweep { common, snapshot, split } => {
            for row in cmd_sweep(&load(&common)?, &snapshot, split.into())? {
                println!("n_inf {:>3}  PSNR {}", row.n_inf, row.psnr);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
