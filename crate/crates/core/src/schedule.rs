//! Training-phase state machine: a warmup stretch with pairing off, an
//! intermittent on/off cadence, and a final fine-tune stretch with pairing
//! permanently off.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Whether schedule counters tick per epoch or per training image served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleUnit {
    Epochs,
    Images,
}

/// Validated schedule parameters. All spans are in [`ScheduleUnit`] ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawScheduleConfig", into = "RawScheduleConfig")]
pub struct ScheduleConfig {
    unit: ScheduleUnit,
    warmup: u64,
    on_span: u64,
    off_span: u64,
    finetune_start: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawScheduleConfig {
    unit: ScheduleUnit,
    warmup: u64,
    on_span: u64,
    off_span: u64,
    finetune_start: u64,
}

impl TryFrom<RawScheduleConfig> for ScheduleConfig {
    type Error = Error;

    fn try_from(raw: RawScheduleConfig) -> Result<Self> {
        ScheduleConfig::new(
            raw.unit,
            raw.warmup,
            raw.on_span,
            raw.off_span,
            raw.finetune_start,
        )
    }
}

impl From<ScheduleConfig> for RawScheduleConfig {
    fn from(cfg: ScheduleConfig) -> Self {
        RawScheduleConfig {
            unit: cfg.unit,
            warmup: cfg.warmup,
            on_span: cfg.on_span,
            off_span: cfg.off_span,
            finetune_start: cfg.finetune_start,
        }
    }
}

impl ScheduleConfig {
    /// Checks the invariants once; [`phase_at`] never re-validates.
    pub fn new(
        unit: ScheduleUnit,
        warmup: u64,
        on_span: u64,
        off_span: u64,
        finetune_start: u64,
    ) -> Result<Self> {
        if on_span + off_span < 1 {
            return Err(Error::Config(
                "schedule cycle must span at least one tick (on_span + off_span >= 1)".into(),
            ));
        }
        if finetune_start < warmup {
            return Err(Error::Config(format!(
                "finetune_start {finetune_start} must be >= warmup {warmup}"
            )));
        }
        Ok(ScheduleConfig {
            unit,
            warmup,
            on_span,
            off_span,
            finetune_start,
        })
    }

    pub fn unit(&self) -> ScheduleUnit {
        self.unit
    }

    pub fn warmup(&self) -> u64 {
        self.warmup
    }

    pub fn on_span(&self) -> u64 {
        self.on_span
    }

    pub fn off_span(&self) -> u64 {
        self.off_span
    }

    pub fn finetune_start(&self) -> u64 {
        self.finetune_start
    }
}

/// Training phase at a given schedule tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    IntermittentOn,
    IntermittentOff,
    Finetune,
}

impl Phase {
    /// Pairing runs only while the intermittent cadence is in its on-span.
    pub fn pairing_enabled(self) -> bool {
        self == Phase::IntermittentOn
    }

    /// Short name used in the metrics CSV phase column.
    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::IntermittentOn => "on",
            Phase::IntermittentOff => "off",
            Phase::Finetune => "finetune",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Pure function of `(t, cfg)`: warmup before `warmup`, then on/off cycles
/// of `on_span`/`off_span`, then fine-tune from `finetune_start` onward.
pub fn phase_at(t: u64, cfg: &ScheduleConfig) -> Phase {
    if t >= cfg.finetune_start {
        return Phase::Finetune;
    }
    if t < cfg.warmup {
        return Phase::Warmup;
    }
    let p = (t - cfg.warmup) % (cfg.on_span + cfg.off_span);
    if p < cfg.on_span {
        Phase::IntermittentOn
    } else {
        Phase::IntermittentOff
    }
}

/// Fraction of intermittent-cadence ticks with pairing enabled.
pub fn enabled_fraction(cfg: &ScheduleConfig) -> f64 {
    cfg.on_span as f64 / (cfg.on_span + cfg.off_span) as f64
}

/// Ceiling on training accuracy while equal-weight pairing is active with
/// single labels: `0.5 + 1/(2·n_classes)` for balanced classes. A mixed
/// image is label-ambiguous unless both halves share a class.
pub fn theoretical_max_training_accuracy(n_classes: usize) -> Result<f64> {
    if n_classes < 2 {
        return Err(Error::Config(format!(
            "accuracy ceiling needs at least 2 classes, got {n_classes}"
        )));
    }
    Ok(0.5 + 1.0 / (2.0 * n_classes as f64))
}
