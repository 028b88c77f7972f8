//! Dataset acquisition and shaping: the CIFAR-10 binary loader,
//! class-balanced subsetting, held-out partner pools, and a synthetic
//! generator for fast property tests.
//!
//! Source pixels are kept as the original 8-bit values (channel-planar,
//! one record per sample) and converted to `[0,1]` intensities on access,
//! so records re-serialize byte-exactly.

use crate::image::Image;
use crate::{dist, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::path::Path;

/// CIFAR-10 class names in the standard label order.
pub const CIFAR10_CLASS_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Labeled image collection with a class index and a content checksum.
///
/// `ids` are positions in the originating load, preserved across
/// subsetting so held-out pools can be proven disjoint.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    height: usize,
    width: usize,
    channels: usize,
    n_classes: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
    ids: Vec<usize>,
    class_index: Vec<Vec<usize>>,
    checksum: String,
}

impl Dataset {
    fn from_parts(
        name: String,
        height: usize,
        width: usize,
        channels: usize,
        n_classes: usize,
        pixels: Vec<u8>,
        labels: Vec<u8>,
        ids: Vec<usize>,
    ) -> Result<Self> {
        let px = height * width * channels;
        if pixels.len() != labels.len() * px || labels.len() != ids.len() {
            return Err(Error::Shape(format!(
                "dataset buffers disagree: {} pixels, {} labels, {} ids",
                pixels.len(),
                labels.len(),
                ids.len()
            )));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= n_classes)
        {
            return Err(Error::Shape(format!(
                "sample {i} has label {l} >= n_classes {n_classes}"
            )));
        }
        let mut class_index = vec![Vec::new(); n_classes];
        for (i, &l) in labels.iter().enumerate() {
            class_index[l as usize].push(i);
        }
        let mut hasher = Sha256::new();
        for i in 0..labels.len() {
            hasher.update([labels[i]]);
            hasher.update(&pixels[i * px..(i + 1) * px]);
        }
        let checksum = hex(&hasher.finalize());
        Ok(Dataset {
            name,
            height,
            width,
            channels,
            n_classes,
            pixels,
            labels,
            ids,
            class_index,
            checksum,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Map class → sample positions; exactly partitions `0..len()`.
    pub fn class_index(&self) -> &[Vec<usize>] {
        &self.class_index
    }

    /// SHA-256 over the concatenated `label+pixels` records, hex-encoded.
    /// For CIFAR-10 loads this equals the hash of the batch file contents
    /// in documented batch order.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Source ids (positions in the originating load).
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Materializes sample `i` as a `[0,1]`-intensity image.
    pub fn image(&self, i: usize) -> Image {
        let px = self.height * self.width * self.channels;
        Image::from_u8(
            self.height,
            self.width,
            self.channels,
            &self.pixels[i * px..(i + 1) * px],
        )
        .expect("stored samples satisfy image invariants")
    }

    /// Serializes sample `i` in record layout (label byte, then pixels).
    pub fn record_bytes(&self, i: usize) -> Vec<u8> {
        let px = self.height * self.width * self.channels;
        let mut rec = Vec::with_capacity(1 + px);
        rec.push(self.labels[i]);
        rec.extend_from_slice(&self.pixels[i * px..(i + 1) * px]);
        rec
    }

    /// Smallest per-class sample count.
    pub fn min_class_size(&self) -> usize {
        self.class_index.iter().map(Vec::len).min().unwrap_or(0)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

const CIFAR_RECORD: usize = 3073;
const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];

/// Loads the standard CIFAR-10 binary batches from `dir`:
/// 3073-byte records (1 label byte + 3×1024 channel-planar pixel bytes,
/// row-major per channel), five train batches plus `test_batch.bin`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut train_pixels = Vec::new();
    let mut train_labels = Vec::new();
    for file in CIFAR_TRAIN_FILES {
        read_cifar_batch(&dir.join(file), &mut train_pixels, &mut train_labels)?;
    }
    let mut test_pixels = Vec::new();
    let mut test_labels = Vec::new();
    read_cifar_batch(&dir.join("test_batch.bin"), &mut test_pixels, &mut test_labels)?;

    let train_ids = (0..train_labels.len()).collect();
    let test_ids = (0..test_labels.len()).collect();
    let train = Dataset::from_parts(
        "cifar10-train".into(),
        32,
        32,
        3,
        10,
        train_pixels,
        train_labels,
        train_ids,
    )?;
    let test = Dataset::from_parts(
        "cifar10-test".into(),
        32,
        32,
        3,
        10,
        test_pixels,
        test_labels,
        test_ids,
    )?;
    Ok((train, test))
}

fn read_cifar_batch(path: &Path, pixels: &mut Vec<u8>, labels: &mut Vec<u8>) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::DataFormat {
        path: path.to_path_buf(),
        reason: format!("cannot read file: {e}"),
    })?;
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::DataFormat {
            path: path.to_path_buf(),
            reason: format!(
                "file length {} is not a multiple of the {CIFAR_RECORD}-byte record (truncated after record {})",
                bytes.len(),
                bytes.len() / CIFAR_RECORD
            ),
        });
    }
    for (rec_no, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0];
        if label > 9 {
            return Err(Error::DataFormat {
                path: path.to_path_buf(),
                reason: format!("record {rec_no}: label byte {label} > 9"),
            });
        }
        labels.push(label);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(())
}

/// Draws `k` of `pool.len()` positions uniformly without replacement
/// (partial Fisher-Yates), returned in ascending order.
fn sample_without_replacement<R: Rng>(pool: &[usize], k: usize, rng: &mut R) -> Vec<usize> {
    let mut pool = pool.to_vec();
    for i in 0..k {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    pool
}

/// Uniform class-balanced subset: `n_per_class` samples drawn without
/// replacement from every class, deterministic for a seed. Selected
/// samples keep their source ids and ascending source order, so a
/// full-size request reproduces the input exactly.
pub fn subset_per_class(ds: &Dataset, n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class > ds.min_class_size() {
        return Err(Error::Config(format!(
            "requested {n_per_class} per class but smallest class has {}",
            ds.min_class_size()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(n_per_class * ds.n_classes);
    for class_positions in &ds.class_index {
        picked.extend(sample_without_replacement(
            class_positions,
            n_per_class,
            &mut rng,
        ));
    }
    picked.sort_unstable();

    let px = ds.height * ds.width * ds.channels;
    let mut pixels = Vec::with_capacity(picked.len() * px);
    let mut labels = Vec::with_capacity(picked.len());
    let mut ids = Vec::with_capacity(picked.len());
    for &pos in &picked {
        pixels.extend_from_slice(&ds.pixels[pos * px..(pos + 1) * px]);
        labels.push(ds.labels[pos]);
        ids.push(ds.ids[pos]);
    }
    Dataset::from_parts(
        format!("{}[{n_per_class}/class seed={seed}]", ds.name),
        ds.height,
        ds.width,
        ds.channels,
        ds.n_classes,
        pixels,
        labels,
        ids,
    )
}

/// Unlabeled partner images held out from the active training subset.
#[derive(Debug, Clone)]
pub struct NonTrainingPool {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
    source_ids: Vec<usize>,
}

impl NonTrainingPool {
    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    pub fn image(&self, i: usize) -> Image {
        let px = self.height * self.width * self.channels;
        Image::from_u8(
            self.height,
            self.width,
            self.channels,
            &self.pixels[i * px..(i + 1) * px],
        )
        .expect("pool samples satisfy image invariants")
    }

    /// Ids in the originating load; disjoint from the training subset.
    pub fn source_ids(&self) -> &[usize] {
        &self.source_ids
    }
}

/// Samples `pool_size` images uniformly from the samples of `ds` that are
/// not in `training_subset` (by source id). Labels are dropped.
pub fn build_nontraining_pool(
    ds: &Dataset,
    training_subset: &Dataset,
    pool_size: usize,
    seed: u64,
) -> Result<NonTrainingPool> {
    if pool_size == 0 {
        return Err(Error::Config(
            "non-training pool must hold at least one image".into(),
        ));
    }
    let in_training: std::collections::HashSet<usize> =
        training_subset.ids.iter().copied().collect();
    let held_out: Vec<usize> = (0..ds.len())
        .filter(|&pos| !in_training.contains(&ds.ids[pos]))
        .collect();
    if pool_size > held_out.len() {
        return Err(Error::Config(format!(
            "pool of {pool_size} requested but only {} held-out samples exist",
            held_out.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample_without_replacement(&held_out, pool_size, &mut rng);

    let px = ds.height * ds.width * ds.channels;
    let mut pixels = Vec::with_capacity(picked.len() * px);
    let mut source_ids = Vec::with_capacity(picked.len());
    for &pos in &picked {
        pixels.extend_from_slice(&ds.pixels[pos * px..(pos + 1) * px]);
        source_ids.push(ds.ids[pos]);
    }
    Ok(NonTrainingPool {
        height: ds.height,
        width: ds.width,
        channels: ds.channels,
        pixels,
        source_ids,
    })
}

/// Generates a balanced class-conditional dataset that a small network can
/// overfit quickly: each class is a horizontal band at a class-dependent
/// row with class-dependent channel amplitudes, plus `difficulty`-scaled
/// vertical jitter and pixel noise. Deterministic per seed; 3 channels.
pub fn make_synthetic(
    n_classes: usize,
    n_per_class: usize,
    image_size: usize,
    difficulty: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_classes == 0 || n_per_class == 0 || image_size == 0 {
        return Err(Error::Config(
            "synthetic dataset parameters must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&difficulty) {
        return Err(Error::Config(format!(
            "difficulty {difficulty} outside [0,1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = synth_split(
        format!("synthetic-train(n={n_classes}x{n_per_class},s={image_size},d={difficulty},seed={seed})"),
        n_classes,
        n_per_class,
        image_size,
        difficulty,
        &mut rng,
    )?;
    let test = synth_split(
        format!("synthetic-test(n={n_classes}x{n_per_class},s={image_size},d={difficulty},seed={seed})"),
        n_classes,
        n_per_class,
        image_size,
        difficulty,
        &mut rng,
    )?;
    Ok((train, test))
}

fn synth_split<R: Rng>(
    name: String,
    n_classes: usize,
    n_per_class: usize,
    size: usize,
    difficulty: f64,
    rng: &mut R,
) -> Result<Dataset> {
    let channels = 3;
    let px = size * size * channels;
    let n = n_classes * n_per_class;
    let mut pixels = Vec::with_capacity(n * px);
    let mut labels = Vec::with_capacity(n);
    let band_sigma = size as f64 / (2.2 * n_classes as f64);
    let jitter_sigma = 0.5 * band_sigma * difficulty;
    let noise_sigma = 0.22 * difficulty;
    for class in 0..n_classes {
        let base_row = (class as f64 + 0.5) * size as f64 / n_classes as f64;
        for _ in 0..n_per_class {
            let row = base_row + jitter_sigma * dist::standard_normal(rng);
            for c in 0..channels {
                // Distinct per-(class, channel) band amplitude.
                let amp = 0.40 + 0.55 * (((class * 2 + c * 3 + 1) % 7) as f64) / 7.0;
                for y in 0..size {
                    let d = (y as f64 - row) / band_sigma;
                    let band = 0.08 + amp * (-0.5 * d * d).exp();
                    for _x in 0..size {
                        let v = band + noise_sigma * dist::standard_normal(rng);
                        pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                    }
                }
            }
            labels.push(class as u8);
        }
    }
    let ids = (0..n).collect();
    Dataset::from_parts(name, size, size, channels, n_classes, pixels, labels, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_synth() -> (Dataset, Dataset) {
        make_synthetic(4, 6, 8, 0.3, 42).unwrap()
    }

    #[test]
    fn synthetic_is_seed_deterministic_and_balanced() {
        let (a_train, a_test) = make_synthetic(3, 5, 10, 0.5, 7).unwrap();
        let (b_train, b_test) = make_synthetic(3, 5, 10, 0.5, 7).unwrap();
        assert_eq!(a_train.checksum(), b_train.checksum());
        assert_eq!(a_test.checksum(), b_test.checksum());
        let (c_train, _) = make_synthetic(3, 5, 10, 0.5, 8).unwrap();
        assert_ne!(a_train.checksum(), c_train.checksum());
        for class in a_train.class_index() {
            assert_eq!(class.len(), 5);
        }
    }

    #[test]
    fn synthetic_noise_free_classes_are_linearly_separable() {
        // difficulty = 0 leaves identical samples per class, so a nearest
        // centroid probe (a linear classifier) must reach 100% on train.
        let (train, _) = make_synthetic(6, 4, 9, 0.0, 3).unwrap();
        let px = 9 * 9 * 3;
        let mut centroids = vec![vec![0.0f64; px]; 6];
        for i in 0..train.len() {
            let img = train.image(i);
            for (acc, &v) in centroids[train.label(i)].iter_mut().zip(img.data()) {
                *acc += v / 4.0;
            }
        }
        let mut correct = 0;
        for i in 0..train.len() {
            let img = train.image(i);
            let best = (0..6)
                .min_by(|&a, &b| {
                    let da: f64 = centroids[a]
                        .iter()
                        .zip(img.data())
                        .map(|(c, v)| (c - v) * (c - v))
                        .sum();
                    let db: f64 = centroids[b]
                        .iter()
                        .zip(img.data())
                        .map(|(c, v)| (c - v) * (c - v))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if best == train.label(i) {
                correct += 1;
            }
        }
        assert_eq!(correct, train.len());
    }

    #[test]
    fn class_index_partitions_samples() {
        let (train, _) = tiny_synth();
        let mut seen = vec![false; train.len()];
        for (class, members) in train.class_index().iter().enumerate() {
            for &pos in members {
                assert_eq!(train.label(pos), class);
                assert!(!seen[pos], "position {pos} indexed twice");
                seen[pos] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn subset_is_balanced_deterministic_and_identity_at_full_size() {
        let (train, _) = tiny_synth();
        let a = subset_per_class(&train, 2, 11).unwrap();
        let b = subset_per_class(&train, 2, 11).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_eq!(a.ids(), b.ids());
        assert_eq!(a.len(), 8);
        for class in a.class_index() {
            assert_eq!(class.len(), 2);
        }
        let c = subset_per_class(&train, 2, 12).unwrap();
        assert_ne!(a.ids(), c.ids());

        let full = subset_per_class(&train, 6, 5).unwrap();
        assert_eq!(full.ids(), train.ids());
        assert_eq!(full.checksum(), train.checksum());

        assert!(subset_per_class(&train, 7, 0).is_err());
    }

    #[test]
    fn pool_is_disjoint_and_validated() {
        let (train, _) = tiny_synth();
        let subset = subset_per_class(&train, 2, 1).unwrap();
        let pool = build_nontraining_pool(&train, &subset, 10, 2).unwrap();
        assert_eq!(pool.len(), 10);
        let training: std::collections::HashSet<_> = subset.ids().iter().collect();
        for id in pool.source_ids() {
            assert!(!training.contains(id));
        }
        assert!(build_nontraining_pool(&train, &subset, 0, 2).is_err());
        // 24 total - 8 in training leaves 16 held out.
        assert!(build_nontraining_pool(&train, &subset, 17, 2).is_err());
        assert!(build_nontraining_pool(&train, &subset, 16, 2).is_ok());
    }

    #[test]
    fn cifar_record_parsing_and_roundtrip() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        // Two small but format-valid batches of 3 and 2 records.
        let mut rng_state = 1u32;
        let mut next_byte = || {
            rng_state = rng_state.wrapping_mul(1664525).wrapping_add(1013904223);
            (rng_state >> 16) as u8
        };
        let mut records = Vec::new();
        for (file, count, labels) in [
            ("data_batch_1.bin", 3usize, [7u8, 0, 9].as_slice()),
            ("data_batch_2.bin", 2, [3u8, 5].as_slice()),
        ] {
            let mut bytes = Vec::new();
            for i in 0..count {
                let mut rec = vec![labels[i]];
                rec.extend((0..3072).map(|_| next_byte()));
                bytes.extend_from_slice(&rec);
                records.push(rec);
            }
            std::fs::File::create(dir.path().join(file))
                .unwrap()
                .write_all(&bytes)
                .unwrap();
        }
        for file in ["data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"] {
            std::fs::File::create(dir.path().join(file)).unwrap();
        }
        let mut test_rec = vec![1u8];
        test_rec.extend((0..3072).map(|_| next_byte()));
        std::fs::File::create(dir.path().join("test_batch.bin"))
            .unwrap()
            .write_all(&test_rec)
            .unwrap();

        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!(train.len(), 5);
        assert_eq!(test.len(), 1);
        assert_eq!(train.label(0), 7);
        assert_eq!(train.label(3), 3);
        for (i, rec) in records.iter().enumerate() {
            assert_eq!(&train.record_bytes(i), rec, "record {i}");
        }
        assert_eq!(test.record_bytes(0), test_rec);
    }

    #[test]
    fn cifar_loader_rejects_bad_input() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        // Missing files entirely.
        assert!(matches!(
            load_cifar10(dir.path()),
            Err(Error::DataFormat { .. })
        ));
        // Truncated record.
        std::fs::File::create(dir.path().join("data_batch_1.bin"))
            .unwrap()
            .write_all(&vec![0u8; 3072])
            .unwrap();
        let err = load_cifar10(dir.path()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        // Bad label byte, reported with its record number.
        let mut rec = vec![0u8; 3073];
        rec[0] = 1;
        let mut bad = rec.clone();
        bad[0] = 12;
        let mut bytes = rec;
        bytes.extend_from_slice(&bad);
        std::fs::File::create(dir.path().join("data_batch_1.bin"))
            .unwrap()
            .write_all(&bytes)
            .unwrap();
        let err = load_cifar10(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("record 1") && msg.contains("12"), "{msg}");
    }
}
