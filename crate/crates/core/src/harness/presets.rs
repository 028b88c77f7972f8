//! Named experiment presets: one config set per ablation axis, at the
//! documented desk-scale budget (reduced network, CIFAR-10 at 100
//! samples per class, 300 epochs with fine-tuning from 260).
//!
//! CIFAR presets expect the binary batches under
//! `data/cifar-10-batches-bin` unless the config is edited.

use crate::harness::config::{
    DatasetConfig, ExperimentConfig, LabelKind, NetworkKind, NetworkSection, OutputSection,
    PairingSection, Seeds, SelectionKind, TrainSection, WeightKind, CONFIG_VERSION,
};
use crate::nn::AdamParams;
use crate::schedule::{ScheduleConfig, ScheduleUnit};
use std::path::PathBuf;

pub const PRESET_NAMES: [&str; 6] = [
    "fig6_subsets",
    "fig7_selection",
    "fig8_labels",
    "fig9_weights",
    "fig10_ratio",
    "synthetic_smoke",
];

const DESK_EPOCHS: u64 = 300;

fn desk_schedule(on: u64, off: u64) -> ScheduleConfig {
    ScheduleConfig::new(ScheduleUnit::Epochs, 100, on, off, 260).expect("static schedule")
}

/// Schedule that never enables pairing (warmup covers the whole run).
fn baseline_schedule(total: u64) -> ScheduleConfig {
    ScheduleConfig::new(ScheduleUnit::Epochs, total, 8, 2, total).expect("static schedule")
}

fn cifar_base(preset: &str, name: &str) -> ExperimentConfig {
    ExperimentConfig {
        version: CONFIG_VERSION,
        dataset: DatasetConfig::Cifar10 {
            path: PathBuf::from("data/cifar-10-batches-bin"),
            train_per_class: Some(100),
            val_per_class: Some(100),
        },
        pairing: PairingSection {
            selection: SelectionKind::EntireTrainingSet,
            super_class_map: None,
            pool_size: None,
            weights: WeightKind::FixedHalf,
            labels: LabelKind::FirstLabelOnly,
        },
        schedule: desk_schedule(8, 2),
        network: NetworkSection {
            kind: NetworkKind::Reduced,
            patch: 28,
        },
        optimizer: AdamParams::default(),
        train: TrainSection {
            batch_size: 100,
            total_epochs: DESK_EPOCHS,
        },
        seeds: Seeds {
            data: 1,
            init: 2,
            augment: 3,
        },
        output: OutputSection {
            dir: PathBuf::from(format!("runs/{preset}/{name}")),
        },
    }
}

/// Builds the named preset as `(config_name, config)` pairs, or `None`
/// for an unknown name.
pub fn preset(name: &str) -> Option<Vec<(String, ExperimentConfig)>> {
    match name {
        "fig6_subsets" => {
            let mut out = Vec::new();
            for per_class in [10usize, 50, 100] {
                let mut baseline = cifar_base(name, &format!("baseline_{per_class}"));
                baseline.dataset = DatasetConfig::Cifar10 {
                    path: PathBuf::from("data/cifar-10-batches-bin"),
                    train_per_class: Some(per_class),
                    val_per_class: Some(100),
                };
                baseline.schedule = baseline_schedule(DESK_EPOCHS);
                baseline.train.batch_size = (per_class * 10).min(100);
                out.push((format!("baseline_{per_class}"), baseline.clone()));

                let mut pairing = baseline.clone();
                pairing.output.dir = PathBuf::from(format!("runs/{name}/pairing_{per_class}"));
                pairing.schedule = desk_schedule(8, 2);
                out.push((format!("pairing_{per_class}"), pairing.clone()));

                let mut pool = pairing;
                pool.output.dir = PathBuf::from(format!("runs/{name}/pool_{per_class}"));
                pool.pairing.selection = SelectionKind::NonTrainingPool;
                pool.pairing.pool_size = Some(100);
                out.push((format!("pool_{per_class}"), pool));
            }
            Some(out)
        }
        "fig7_selection" => {
            let methods = [
                ("a_entire", SelectionKind::EntireTrainingSet),
                ("b_same_class", SelectionKind::SameClass),
                ("c_different_class", SelectionKind::DifferentClass),
                ("d_same_super", SelectionKind::SameSuperClass),
                ("e_different_super", SelectionKind::DifferentSuperClass),
            ];
            Some(
                methods
                    .into_iter()
                    .map(|(label, selection)| {
                        let mut cfg = cifar_base(name, label);
                        cfg.pairing.selection = selection;
                        (label.to_string(), cfg)
                    })
                    .collect(),
            )
        }
        "fig8_labels" => {
            let mut first = cifar_base(name, "first_label_only");
            first.pairing.labels = LabelKind::FirstLabelOnly;
            let mut blended = cifar_base(name, "blended_half_half");
            blended.pairing.labels = LabelKind::BlendedHalfHalf;
            Some(vec![
                ("first_label_only".into(), first),
                ("blended_half_half".into(), blended),
            ])
        }
        "fig9_weights" => {
            let weights = [
                ("fixed_half", WeightKind::FixedHalf),
                ("uniform", WeightKind::Uniform01),
                ("uniform_capped_half", WeightKind::UniformCappedHalf),
                ("beta_0_2", WeightKind::BetaSymmetric(0.2)),
                ("beta_0_4", WeightKind::BetaSymmetric(0.4)),
            ];
            Some(
                weights
                    .into_iter()
                    .map(|(label, w)| {
                        let mut cfg = cifar_base(name, label);
                        cfg.pairing.weights = w;
                        (label.to_string(), cfg)
                    })
                    .collect(),
            )
        }
        "fig10_ratio" => {
            let ratios = [(10u64, 0u64), (8, 2), (5, 5), (2, 8)];
            Some(
                ratios
                    .into_iter()
                    .map(|(on, off)| {
                        let label = format!("on{on}_off{off}");
                        let mut cfg = cifar_base(name, &label);
                        cfg.schedule = desk_schedule(on, off);
                        (label, cfg)
                    })
                    .collect(),
            )
        }
        "synthetic_smoke" => {
            let mut cfg = cifar_base(name, "smoke");
            cfg.dataset = DatasetConfig::Synthetic {
                n_classes: 10,
                n_per_class: 20,
                image_size: 12,
                difficulty: 0.25,
                train_per_class: None,
            };
            cfg.network.patch = 10;
            cfg.train.batch_size = 25;
            cfg.train.total_epochs = 30;
            cfg.schedule =
                ScheduleConfig::new(ScheduleUnit::Epochs, 5, 8, 2, 25).expect("static schedule");
            Some(vec![("smoke".into(), cfg)])
        }
        _ => None,
    }
}
