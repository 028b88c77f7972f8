//! Experiment configuration: a versioned TOML schema mirroring the
//! domain types, with validation and conversion helpers.

use crate::data::{self, Dataset, NonTrainingPool};
use crate::nn::{AdamParams, NetworkSpec};
use crate::pairing::{
    LabelPolicy, MixWeightDistribution, PairingConfig, SelectionPolicy, SuperClassMap,
};
use crate::schedule::ScheduleConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Current config schema version.
pub const CONFIG_VERSION: u32 = 1;

/// Everything a run needs, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub dataset: DatasetConfig,
    pub pairing: PairingSection,
    pub schedule: ScheduleConfig,
    pub network: NetworkSection,
    pub optimizer: AdamParams,
    pub train: TrainSection,
    pub seeds: Seeds,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Standard binary batches on disk.
    Cifar10 {
        path: PathBuf,
        /// Class-balanced training subset; absent means the full split.
        #[serde(default)]
        train_per_class: Option<usize>,
        /// Class-balanced validation subset; absent means the full split.
        #[serde(default)]
        val_per_class: Option<usize>,
    },
    /// Generated fixture (see `data::make_synthetic`).
    Synthetic {
        n_classes: usize,
        n_per_class: usize,
        image_size: usize,
        difficulty: f64,
        /// Train on a subset, leaving held-out samples for partner pools.
        #[serde(default)]
        train_per_class: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    EntireTrainingSet,
    SameClass,
    DifferentClass,
    SameSuperClass,
    DifferentSuperClass,
    NonTrainingPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    FixedHalf,
    Uniform01,
    UniformCappedHalf,
    BetaSymmetric(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    FirstLabelOnly,
    BlendedHalfHalf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingSection {
    pub selection: SelectionKind,
    /// Class → super-class assignment; defaults to the artificial/living
    /// CIFAR-10 partition when absent and the dataset has 10 classes.
    #[serde(default)]
    pub super_class_map: Option<Vec<usize>>,
    /// Pool size for `non_training_pool` selection.
    #[serde(default)]
    pub pool_size: Option<usize>,
    pub weights: WeightKind,
    pub labels: LabelKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Figure2,
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSection {
    pub kind: NetworkKind,
    /// Square patch size extracted by the crop augmentations.
    pub patch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSection {
    pub batch_size: usize,
    pub total_epochs: u64,
}

/// Independent seeds so ablations vary one random factor at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    /// Subset selection, pools, and epoch shuffling.
    pub data: u64,
    /// Weight initialization and dropout masks.
    pub init: u64,
    /// Crops, flips, partner choice, and mix weights.
    pub augment: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.network.patch == 0 {
            return Err(Error::Config("patch size must be at least 1".into()));
        }
        match &self.dataset {
            DatasetConfig::Cifar10 {
                train_per_class,
                val_per_class,
                ..
            } => {
                if self.network.patch > 32 {
                    return Err(Error::Config("patch larger than 32x32 source".into()));
                }
                if train_per_class == &Some(0) || val_per_class == &Some(0) {
                    return Err(Error::Config("subset sizes must be positive".into()));
                }
            }
            DatasetConfig::Synthetic {
                n_classes,
                n_per_class,
                image_size,
                difficulty,
                train_per_class,
            } => {
                if *n_classes == 0 || *n_per_class == 0 || *image_size == 0 {
                    return Err(Error::Config("synthetic sizes must be positive".into()));
                }
                if !(0.0..=1.0).contains(difficulty) {
                    return Err(Error::Config("difficulty outside [0,1]".into()));
                }
                if self.network.patch > *image_size {
                    return Err(Error::Config(format!(
                        "patch {} larger than synthetic image size {image_size}",
                        self.network.patch
                    )));
                }
                if let Some(tpc) = train_per_class {
                    if *tpc == 0 || tpc > n_per_class {
                        return Err(Error::Config(format!(
                            "train_per_class {tpc} outside 1..={n_per_class}"
                        )));
                    }
                }
            }
        }
        if self.pairing.selection == SelectionKind::NonTrainingPool {
            match self.pairing.pool_size {
                None | Some(0) => {
                    return Err(Error::Config(
                        "non_training_pool selection needs pool_size >= 1".into(),
                    ))
                }
                _ => {}
            }
            if self.pairing.labels == LabelKind::BlendedHalfHalf {
                return Err(Error::Config(
                    "blended labels are unavailable with an unlabeled pool partner".into(),
                ));
            }
        }
        if let WeightKind::BetaSymmetric(alpha) = self.pairing.weights {
            if !(alpha > 0.0) {
                return Err(Error::Config(format!("beta alpha {alpha} must be positive")));
            }
        }
        Ok(())
    }

    /// Loads (and optionally subsets) the train and validation datasets.
    pub fn load_datasets(&self) -> Result<LoadedData> {
        match &self.dataset {
            DatasetConfig::Cifar10 {
                path,
                train_per_class,
                val_per_class,
            } => {
                let (full_train, full_val) = data::load_cifar10(path)?;
                let train = match train_per_class {
                    Some(n) => data::subset_per_class(&full_train, *n, self.seeds.data)?,
                    None => full_train.clone(),
                };
                let val = match val_per_class {
                    Some(n) => data::subset_per_class(&full_val, *n, self.seeds.data)?,
                    None => full_val,
                };
                Ok(LoadedData {
                    train,
                    val,
                    pool_frame: full_train,
                })
            }
            DatasetConfig::Synthetic {
                n_classes,
                n_per_class,
                image_size,
                difficulty,
                train_per_class,
            } => {
                let (full_train, val) = data::make_synthetic(
                    *n_classes,
                    *n_per_class,
                    *image_size,
                    *difficulty,
                    self.seeds.data,
                )?;
                let train = match train_per_class {
                    Some(n) => data::subset_per_class(&full_train, *n, self.seeds.data)?,
                    None => full_train.clone(),
                };
                Ok(LoadedData {
                    train,
                    val,
                    pool_frame: full_train,
                })
            }
        }
    }

    /// Builds the partner pool when the selection policy needs one.
    /// The pool is drawn from samples of the source split left out of the
    /// training subset, with a seed derived from the data seed.
    pub fn build_pool(&self, loaded: &LoadedData) -> Result<Option<NonTrainingPool>> {
        if self.pairing.selection != SelectionKind::NonTrainingPool {
            return Ok(None);
        }
        let size = self.pairing.pool_size.unwrap_or(0);
        let pool = data::build_nontraining_pool(
            &loaded.pool_frame,
            &loaded.train,
            size,
            self.seeds.data.wrapping_add(1),
        )?;
        Ok(Some(pool))
    }

    /// Resolves the pairing section against a class count.
    pub fn build_pairing(&self, n_classes: usize) -> Result<PairingConfig> {
        let map = || -> Result<SuperClassMap> {
            match &self.pairing.super_class_map {
                Some(m) => SuperClassMap::new(m.clone()),
                None if n_classes == 10 => Ok(SuperClassMap::cifar10_default()),
                None => Err(Error::Config(
                    "super-class selection needs super_class_map for non-CIFAR class counts"
                        .into(),
                )),
            }
        };
        let selection = match self.pairing.selection {
            SelectionKind::EntireTrainingSet => SelectionPolicy::EntireTrainingSet,
            SelectionKind::SameClass => SelectionPolicy::SameClass,
            SelectionKind::DifferentClass => SelectionPolicy::DifferentClass,
            SelectionKind::SameSuperClass => SelectionPolicy::SameSuperClass(map()?),
            SelectionKind::DifferentSuperClass => SelectionPolicy::DifferentSuperClass(map()?),
            SelectionKind::NonTrainingPool => SelectionPolicy::NonTrainingPool,
        };
        let weights = match self.pairing.weights {
            WeightKind::FixedHalf => MixWeightDistribution::FixedHalf,
            WeightKind::Uniform01 => MixWeightDistribution::Uniform01,
            WeightKind::UniformCappedHalf => MixWeightDistribution::UniformCappedHalf,
            WeightKind::BetaSymmetric(a) => MixWeightDistribution::BetaSymmetric(a),
        };
        let labels = match self.pairing.labels {
            LabelKind::FirstLabelOnly => LabelPolicy::FirstLabelOnly,
            LabelKind::BlendedHalfHalf => LabelPolicy::BlendedHalfHalf,
        };
        Ok(PairingConfig {
            selection,
            weights,
            labels,
        })
    }

    /// Network description for this config and class count.
    pub fn build_network_spec(&self, n_classes: usize) -> NetworkSpec {
        let input = (3, self.network.patch, self.network.patch);
        match self.network.kind {
            NetworkKind::Figure2 => NetworkSpec::figure2(input, n_classes),
            NetworkKind::Reduced => NetworkSpec::reduced(input, n_classes),
        }
    }
}

/// Datasets materialized for a run. `pool_frame` is the full source split
/// partner pools are drawn from.
pub struct LoadedData {
    pub train: Dataset,
    pub val: Dataset,
    pub pool_frame: Dataset,
}
