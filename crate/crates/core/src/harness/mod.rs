//! Experiment configuration, orchestration and report files.
//!
//! Layout under `output_dir`: `data/` (dataset splits), `runs/<strategy>/`
//! (training), `eval/<split>/`, `sweep/<split>/`, `cs/<split>/` and
//! `benchmark/`. Every directory gets a `manifest.json`.

mod commands;
mod config;
mod manifest;

pub use commands::{
    cmd_benchmark, cmd_cs, cmd_eval, cmd_generate, cmd_sweep, cmd_train, exit_code, load_split, split_path,
    tune_lambda, BenchmarkRow, CsOutcome, EvalOutcome, GenerateSummary, MetricReport, TrainOutcome, LAMBDA_GRID,
};
pub use config::ExperimentConfig;
pub use manifest::{file_sha256, RunManifest, Seeds, CODE_VERSION};
