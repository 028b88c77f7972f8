//! Metrics CSV and the run manifest.
//!
//! The CSV carries one row per completed epoch under a fixed header.
//! Numeric columns are written in shortest round-trip form, so two runs
//! with identical seeds produce byte-identical files apart from the
//! wall-time column. The manifest echoes the full config plus dataset
//! checksums and the code version, as TOML.

use crate::harness::config::ExperimentConfig;
use crate::harness::run::{MetricsLog, RunResult};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Fixed CSV header.
pub const CSV_HEADER: &str = "epoch,phase,train_err,train_loss,val_err,val_loss,seconds";

/// Renders the log as CSV text (header + one row per epoch).
pub fn metrics_to_csv(log: &MetricsLog) -> String {
    let mut out = String::with_capacity(64 * (log.records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &log.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.3}\n",
            r.epoch, r.phase, r.train_err, r.train_loss, r.val_err, r.val_loss, r.seconds
        ));
    }
    out
}

pub fn write_metrics_csv(log: &MetricsLog, path: &Path) -> Result<()> {
    std::fs::write(path, metrics_to_csv(log))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Run provenance: config echo, dataset checksums, code version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub code_version: String,
    pub train_checksum: String,
    pub val_checksum: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig, result: &RunResult) -> Self {
        Manifest {
            manifest_version: 1,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            train_checksum: result.train_checksum.clone(),
            val_checksum: result.val_checksum.clone(),
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("manifest parse: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text)
    }
}
