//! Experiment harness: config schema, seeded runs, metrics emission,
//! and named presets for the ablation axes.

pub mod config;
pub mod metrics;
pub mod presets;
pub mod run;

pub use config::{DatasetConfig, ExperimentConfig, LoadedData};
pub use metrics::{metrics_to_csv, write_metrics_csv, Manifest, CSV_HEADER};
pub use run::{
    argmax_tie_lowest, evaluate, run_experiment, run_experiment_with, EpochRecord, MetricsLog,
    RunResult,
};

use crate::nn::save_checkpoint;
use crate::{Error, Result};
use std::path::{Path, PathBuf};

/// Runs the experiment and writes `metrics.csv`, `manifest.toml`, and
/// `final.ckpt` (parameters plus optimizer state) under the output
/// directory, which is created if needed.
pub fn run_and_emit<F>(
    cfg: &ExperimentConfig,
    out_override: Option<&Path>,
    on_epoch: F,
) -> Result<(RunResult, PathBuf)>
where
    F: FnMut(&EpochRecord),
{
    let out_dir = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let result = run_experiment_with(cfg, on_epoch)?;
    write_metrics_csv(&result.metrics, &out_dir.join("metrics.csv"))?;
    Manifest::new(cfg, &result).write(&out_dir.join("manifest.toml"))?;
    save_checkpoint(&out_dir.join("final.ckpt"), &result.network, Some(&result.optimizer))?;
    Ok((result, out_dir))
}
