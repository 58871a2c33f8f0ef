//! Experiment driver for the building classifiers: configuration,
//! single runs, latent-grid sweeps and report comparison.

pub mod config;
pub mod experiment;

use std::path::Path;

use latentfuse::metrics::{compare_reports, format_delta_table, EvalReport};
use latentfuse::synth::{generate_dataset, write_dataset};
use latentfuse::{Error, Result};

pub use config::{ExperimentConfig, Variant};
pub use experiment::{
    load_splits, prepare_out_dir, run, run_sweep, train_and_evaluate, write_run, write_sweep, Grid, RunResult,
    Splits,
};

/// Process exit status for an error: 1 for bad configuration or I/O,
/// 2 for inputs the models refuse, 3 for numerical failure in training.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Validation(_) | Error::Io(_) | Error::Json(_) => 1,
        Error::Contract(_) | Error::EmptyKeys | Error::Dimension(_) => 2,
        Error::Divergence(_) | Error::NonFinite { .. } => 3,
    }
}

/// Generates the configured dataset into `out` and returns its size.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    let samples = generate_dataset(&cfg.dataset())?;
    write_dataset(out, &samples)?;
    Ok(samples.len())
}

/// Delta table of each candidate report against `baseline`, in AP points.
pub fn compare(baseline: &EvalReport, candidates: &[(String, EvalReport)]) -> String {
    format_delta_table(&compare_reports(baseline, candidates))
}
