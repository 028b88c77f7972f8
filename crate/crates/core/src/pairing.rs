//! Partner-selection policies, mix-weight distributions, label policies,
//! and the composed augment-then-mix sample pipeline.
//!
//! Baseline augmentation (random crop to the patch size, then a coin-flip
//! horizontal flip) is applied to every served image. While pairing is
//! enabled a partner image is drawn by policy, both images are augmented
//! independently, and the pair is blended per-pixel with a drawn weight.

use crate::data::{Dataset, NonTrainingPool};
use crate::image::{self, Image, MixWeight};
use crate::{dist, Error, Result};
use rand::Rng;

/// Total class → super-class assignment (indexed by class id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperClassMap(Vec<usize>);

impl SuperClassMap {
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::Config("super-class map must not be empty".into()));
        }
        Ok(SuperClassMap(assignment))
    }

    /// The CIFAR-10 partition used throughout: artificial objects
    /// (airplane, automobile, ship, truck) vs living things (the rest).
    pub fn cifar10_default() -> Self {
        // class ids:            0  1  2  3  4  5  6  7  8  9
        SuperClassMap(vec![0, 0, 1, 1, 1, 1, 1, 1, 0, 0])
    }

    pub fn super_of(&self, class: usize) -> usize {
        self.0[class]
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.0
    }
}

/// How the partner image is chosen for an anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectionPolicy {
    /// Uniform over the whole training set (the default).
    EntireTrainingSet,
    /// Uniform over samples sharing the anchor's class.
    SameClass,
    /// Uniform over samples of any other class.
    DifferentClass,
    /// Uniform over samples whose super-class matches the anchor's.
    SameSuperClass(SuperClassMap),
    /// Uniform over samples of the other super-classes.
    DifferentSuperClass(SuperClassMap),
    /// Uniform over a held-out unlabeled pool.
    NonTrainingPool,
}

/// Where a selected partner lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartnerRef {
    /// Position in the training set.
    Train(usize),
    /// Position in the non-training pool.
    Pool(usize),
}

/// Draws a partner uniformly from the policy's candidate set. The anchor
/// itself is a legal partner wherever the candidate set contains it.
pub fn select_partner<R: Rng + ?Sized>(
    policy: &SelectionPolicy,
    anchor_index: usize,
    anchor_class: usize,
    class_index: &[Vec<usize>],
    pool: Option<&NonTrainingPool>,
    rng: &mut R,
) -> Result<PartnerRef> {
    let _ = anchor_index; // no current policy excludes the anchor
    if anchor_class >= class_index.len() {
        return Err(Error::Policy(format!(
            "anchor class {anchor_class} outside class index of {}",
            class_index.len()
        )));
    }
    let candidate_class = |class: usize| -> bool {
        match policy {
            SelectionPolicy::EntireTrainingSet => true,
            SelectionPolicy::SameClass => class == anchor_class,
            SelectionPolicy::DifferentClass => class != anchor_class,
            SelectionPolicy::SameSuperClass(map) => {
                map.super_of(class) == map.super_of(anchor_class)
            }
            SelectionPolicy::DifferentSuperClass(map) => {
                map.super_of(class) != map.super_of(anchor_class)
            }
            SelectionPolicy::NonTrainingPool => false,
        }
    };

    if let SelectionPolicy::NonTrainingPool = policy {
        let pool = pool.ok_or_else(|| {
            Error::Policy("non-training-pool selection requires a pool".into())
        })?;
        if pool.is_empty() {
            return Err(Error::Policy("non-training pool is empty".into()));
        }
        return Ok(PartnerRef::Pool(rng.gen_range(0..pool.len())));
    }

    if let SelectionPolicy::SameSuperClass(map) | SelectionPolicy::DifferentSuperClass(map) =
        policy
    {
        if map.n_classes() != class_index.len() {
            return Err(Error::Policy(format!(
                "super-class map covers {} classes but the dataset has {}",
                map.n_classes(),
                class_index.len()
            )));
        }
    }

    let total: usize = (0..class_index.len())
        .filter(|&c| candidate_class(c))
        .map(|c| class_index[c].len())
        .sum();
    if total == 0 {
        return Err(Error::Policy(format!(
            "policy {policy:?} leaves no candidate partners for class {anchor_class}"
        )));
    }
    let mut k = rng.gen_range(0..total);
    for (class, members) in class_index.iter().enumerate() {
        if !candidate_class(class) {
            continue;
        }
        if k < members.len() {
            return Ok(PartnerRef::Train(members[k]));
        }
        k -= members.len();
    }
    unreachable!("draw index exceeded candidate total");
}

/// Distribution of the first image's mix weight.
#[derive(Debug, Clone, PartialEq)]
pub enum MixWeightDistribution {
    /// Equal weighting, `w = 0.5` exactly. Consumes no randomness.
    FixedHalf,
    /// Uniform on `[0,1]`.
    Uniform01,
    /// Second image limited to half: first weight uniform on `[0.5,1]`.
    UniformCappedHalf,
    /// Beta(α,α) for the first weight.
    BetaSymmetric(f64),
}

impl MixWeightDistribution {
    pub fn validate(&self) -> Result<()> {
        if let MixWeightDistribution::BetaSymmetric(alpha) = self {
            if !(*alpha > 0.0) {
                return Err(Error::Config(format!(
                    "beta mix-weight alpha must be positive, got {alpha}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws a mix weight. `FixedHalf` must leave the random source untouched
/// so weight ablations never perturb the rest of the stream.
pub fn draw_mix_weight<R: Rng + ?Sized>(
    dist: &MixWeightDistribution,
    rng: &mut R,
) -> MixWeight {
    let w = match dist {
        MixWeightDistribution::FixedHalf => return MixWeight::HALF,
        MixWeightDistribution::Uniform01 => rng.gen::<f64>(),
        MixWeightDistribution::UniformCappedHalf => 0.5 + 0.5 * rng.gen::<f64>(),
        MixWeightDistribution::BetaSymmetric(alpha) => dist::beta_symmetric(*alpha, rng),
    };
    MixWeight::new(w).expect("samplers stay inside [0,1]")
}

/// How the training target is built from the pair's labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPolicy {
    /// Keep only the anchor's label (the default).
    FirstLabelOnly,
    /// 0.5 on each of the two labels (1.0 when they coincide).
    BlendedHalfHalf,
}

/// Probability vector over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    probs: Vec<f64>,
}

impl SoftLabel {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| p < 0.0) {
            return Err(Error::Config("soft label has a negative entry".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("soft label sums to {sum}, not 1")));
        }
        Ok(SoftLabel { probs })
    }

    pub fn one_hot(class: usize, n_classes: usize) -> Result<Self> {
        if class >= n_classes {
            return Err(Error::Config(format!(
                "label {class} out of range for {n_classes} classes"
            )));
        }
        let mut probs = vec![0.0; n_classes];
        probs[class] = 1.0;
        Ok(SoftLabel { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }
}

/// Builds the target for a (label_a, label_b) pair under a label policy.
pub fn make_target(
    label_a: usize,
    label_b: usize,
    policy: LabelPolicy,
    n_classes: usize,
) -> Result<SoftLabel> {
    if label_a >= n_classes || label_b >= n_classes {
        return Err(Error::Config(format!(
            "labels ({label_a},{label_b}) out of range for {n_classes} classes"
        )));
    }
    match policy {
        LabelPolicy::FirstLabelOnly => SoftLabel::one_hot(label_a, n_classes),
        LabelPolicy::BlendedHalfHalf => {
            let mut probs = vec![0.0; n_classes];
            probs[label_a] += 0.5;
            probs[label_b] += 0.5;
            SoftLabel::new(probs)
        }
    }
}

/// Partner selection + mix weights + label policy for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingConfig {
    pub selection: SelectionPolicy,
    pub weights: MixWeightDistribution,
    pub labels: LabelPolicy,
}

impl PairingConfig {
    /// Checks policy invariants against the dataset and optional pool.
    pub fn validate(&self, n_classes: usize, pool: Option<&NonTrainingPool>) -> Result<()> {
        self.weights.validate()?;
        match &self.selection {
            SelectionPolicy::SameSuperClass(map) | SelectionPolicy::DifferentSuperClass(map) => {
                if map.n_classes() != n_classes {
                    return Err(Error::Config(format!(
                        "super-class map covers {} classes, dataset has {n_classes}",
                        map.n_classes()
                    )));
                }
            }
            SelectionPolicy::NonTrainingPool => {
                let pool = pool.ok_or_else(|| {
                    Error::Config("non-training-pool selection requires a pool".into())
                })?;
                if pool.is_empty() {
                    return Err(Error::Config("non-training pool is empty".into()));
                }
                if self.labels == LabelPolicy::BlendedHalfHalf {
                    return Err(Error::Config(
                        "blended labels are unavailable with an unlabeled pool partner".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Random crop to the patch size, then horizontal flip with probability 1/2.
pub fn baseline_augment<R: Rng + ?Sized>(
    img: &Image,
    patch_h: usize,
    patch_w: usize,
    rng: &mut R,
) -> Result<Image> {
    let cropped = image::random_crop(img, patch_h, patch_w, rng)?;
    Ok(if rng.gen::<bool>() {
        image::horizontal_flip(&cropped)
    } else {
        cropped
    })
}

/// Serves one training sample: baseline-augments the anchor, and when
/// pairing is enabled also selects and baseline-augments a partner, mixes
/// the two with a drawn weight, and builds the target by label policy.
///
/// The random stream is consumed in a fixed order (anchor crop/flip,
/// partner choice, partner crop/flip, weight); the label policy never
/// touches it, so label ablations see bitwise-identical image streams.
pub fn augment_sample<R: Rng + ?Sized>(
    ds: &Dataset,
    pool: Option<&NonTrainingPool>,
    anchor: usize,
    pairing_enabled: bool,
    cfg: &PairingConfig,
    patch_h: usize,
    patch_w: usize,
    rng: &mut R,
) -> Result<(Image, SoftLabel)> {
    let anchor_label = ds.label(anchor);
    let anchor_aug = baseline_augment(&ds.image(anchor), patch_h, patch_w, rng)?;
    if !pairing_enabled {
        return Ok((anchor_aug, SoftLabel::one_hot(anchor_label, ds.n_classes())?));
    }
    let partner = select_partner(
        &cfg.selection,
        anchor,
        anchor_label,
        ds.class_index(),
        pool,
        rng,
    )?;
    let (partner_img, partner_label) = match partner {
        PartnerRef::Train(i) => (ds.image(i), Some(ds.label(i))),
        PartnerRef::Pool(i) => {
            let pool = pool.expect("select_partner verified pool presence");
            (pool.image(i), None)
        }
    };
    let partner_aug = baseline_augment(&partner_img, patch_h, patch_w, rng)?;
    let w = draw_mix_weight(&cfg.weights, rng);
    let mixed = image::mix_images(&anchor_aug, &partner_aug, w)?;
    let target = match partner_label {
        Some(lb) => make_target(anchor_label, lb, cfg.labels, ds.n_classes())?,
        // Pool partners are unlabeled; validation restricts to FirstLabelOnly.
        None => SoftLabel::one_hot(anchor_label, ds.n_classes())?,
    };
    Ok((mixed, target))
}
