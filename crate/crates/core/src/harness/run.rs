//! Seeded experiment execution: the epoch loop with schedule-driven
//! pairing, center-crop evaluation, and per-epoch metrics.
//!
//! Determinism contract: `(config, seeds)` fully determine every metric,
//! the served image stream, and the final checkpoint; only wall time
//! varies. Per-epoch random sources are derived as independent ChaCha
//! streams of the three seeds, so total epoch count never shifts earlier
//! epochs.

use crate::data::Dataset;
use crate::harness::config::ExperimentConfig;
use crate::image;
use crate::nn::{adam_step, loss_xent_soft, Batch, Network, OptimizerState};
use crate::pairing::{self, SoftLabel};
use crate::schedule::{phase_at, Phase, ScheduleUnit};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::time::Instant;

/// One completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Phase at the first image of the epoch.
    pub phase: Phase,
    pub train_err: f64,
    pub train_loss: f64,
    pub val_err: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
}

/// Everything a finished run produces in memory.
#[derive(Debug)]
pub struct RunResult {
    pub metrics: MetricsLog,
    pub network: Network,
    pub optimizer: OptimizerState,
    /// SHA-256 over the served (augmented, possibly mixed) image stream.
    pub stream_digest: String,
    pub train_checksum: String,
    pub val_checksum: String,
}

fn run_error(epoch: u64, batch: usize, source: Error) -> Error {
    Error::Run {
        epoch,
        batch,
        source: Box::new(source),
    }
}

/// Index of the row maximum, ties broken toward the lowest class id.
pub fn argmax_tie_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs the full experiment described by `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    run_experiment_with(cfg, |_| {})
}

/// [`run_experiment`] with a per-epoch observer (progress printing).
pub fn run_experiment_with<F>(cfg: &ExperimentConfig, mut on_epoch: F) -> Result<RunResult>
where
    F: FnMut(&EpochRecord),
{
    cfg.validate()?;
    let loaded = cfg.load_datasets()?;
    let pool = cfg.build_pool(&loaded)?;
    let train = &loaded.train;
    let val = &loaded.val;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let n_classes = train.n_classes();
    let pairing_cfg = cfg.build_pairing(n_classes)?;
    pairing_cfg.validate(n_classes, pool.as_ref())?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.init);
    let mut net = Network::new(cfg.build_network_spec(n_classes), &mut init_rng)?;
    let mut opt = OptimizerState::for_network(&net, cfg.optimizer);

    let patch = cfg.network.patch;
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut digest = Sha256::new();
    let mut digest_buf: Vec<u8> = Vec::new();
    let mut images_served: u64 = 0;
    let mut records = Vec::with_capacity(cfg.train.total_epochs as usize);

    for epoch in 0..cfg.train.total_epochs {
        let started = Instant::now();
        let epoch_tick = match cfg.schedule.unit() {
            ScheduleUnit::Epochs => epoch,
            ScheduleUnit::Images => images_served,
        };
        let record_phase = phase_at(epoch_tick, &cfg.schedule);

        // Independent per-epoch streams: shuffling from the data seed,
        // augmentation from the augment seed, dropout from the init seed.
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.data);
        shuffle_rng.set_stream(1 + epoch);
        order.shuffle(&mut shuffle_rng);
        let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.augment);
        aug_rng.set_stream(epoch);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.init);
        dropout_rng.set_stream(1 + epoch);

        let mut correct = 0usize;
        let mut loss_sum = 0.0;
        for (batch_no, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
            let mut imgs = Vec::with_capacity(chunk.len());
            let mut targets: Vec<SoftLabel> = Vec::with_capacity(chunk.len());
            let mut anchor_labels = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let tick = match cfg.schedule.unit() {
                    ScheduleUnit::Epochs => epoch,
                    ScheduleUnit::Images => images_served,
                };
                let enabled = phase_at(tick, &cfg.schedule).pairing_enabled();
                let (img, target) = pairing::augment_sample(
                    train,
                    pool.as_ref(),
                    idx,
                    enabled,
                    &pairing_cfg,
                    patch,
                    patch,
                    &mut aug_rng,
                )
                .map_err(|e| run_error(epoch, batch_no, e))?;
                digest_buf.clear();
                for &v in img.data() {
                    digest_buf.extend_from_slice(&v.to_bits().to_le_bytes());
                }
                digest.update(&digest_buf);
                imgs.push(img);
                targets.push(target);
                anchor_labels.push(train.label(idx));
                images_served += 1;
            }
            let batch = Batch::new(&imgs, &targets).map_err(|e| run_error(epoch, batch_no, e))?;
            let cache = net
                .forward_train(&batch.images, &mut dropout_rng)
                .map_err(|e| run_error(epoch, batch_no, e))?;
            let batch_loss = loss_xent_soft(&cache.logits, &batch.targets, batch.len(), n_classes);
            loss_sum += batch_loss * batch.len() as f64;
            for (row, &label) in anchor_labels.iter().enumerate() {
                let logits_row = &cache.logits[row * n_classes..(row + 1) * n_classes];
                if argmax_tie_lowest(logits_row) == label {
                    correct += 1;
                }
            }
            let grads = net
                .backward(&cache, &batch.targets)
                .map_err(|e| run_error(epoch, batch_no, e))?;
            adam_step(&mut net, &grads, &mut opt).map_err(|e| run_error(epoch, batch_no, e))?;
        }

        let (val_err, val_loss) = evaluate(&net, val, patch, cfg.train.batch_size)
            .map_err(|e| run_error(epoch, usize::MAX, e))?;
        let record = EpochRecord {
            epoch,
            phase: record_phase,
            train_err: 1.0 - correct as f64 / n as f64,
            train_loss: loss_sum / n as f64,
            val_err,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        records.push(record);
    }

    Ok(RunResult {
        metrics: MetricsLog { records },
        network: net,
        optimizer: opt,
        stream_digest: format!("{:x}", digest.finalize()),
        train_checksum: train.checksum().to_string(),
        val_checksum: val.checksum().to_string(),
    })
}

/// Eval-mode top-1 error rate and mean loss on `ds`: center-cropped
/// patches, no flipping, ties broken toward the lowest class id.
pub fn evaluate(net: &Network, ds: &Dataset, patch: usize, batch_size: usize) -> Result<(f64, f64)> {
    let k = net.n_classes();
    if ds.n_classes() != k {
        return Err(Error::Shape(format!(
            "network has {k} classes, dataset has {}",
            ds.n_classes()
        )));
    }
    if ds.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let n = ds.len();
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + batch_size.max(1)).min(n);
        let mut imgs = Vec::with_capacity(end - start);
        let mut targets = Vec::with_capacity(end - start);
        for i in start..end {
            imgs.push(image::center_crop(&ds.image(i), patch, patch)?);
            targets.push(SoftLabel::one_hot(ds.label(i), k)?);
        }
        let batch = Batch::new(&imgs, &targets)?;
        let logits = net.forward_eval(&batch.images)?;
        loss_sum += loss_xent_soft(&logits, &batch.targets, batch.len(), k) * batch.len() as f64;
        for (row, i) in (start..end).enumerate() {
            if argmax_tie_lowest(&logits[row * k..(row + 1) * k]) == ds.label(i) {
                correct += 1;
            }
        }
        start = end;
    }
    Ok((1.0 - correct as f64 / n as f64, loss_sum / n as f64))
}
