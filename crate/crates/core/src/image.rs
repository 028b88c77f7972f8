//! Pixel-level image representation and the primitive transforms every
//! pipeline stage composes: per-pixel mixing, cropping, and flipping.
//!
//! Intensities are stored as `f64` in `[0,1]` (8-bit sources are converted
//! as `v / 255`), so the mixing algebra is exactly testable in double
//! precision. Layout is channel-planar: index `(c, y, x)` maps to
//! `c * h * w + y * w + x`, matching the CIFAR-10 binary record layout.

use crate::{Error, Result};
use rand::Rng;

/// H×W×C pixel grid with intensities in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from channel-planar data, checking the invariants
    /// (length = h·w·c, every intensity in `[0,1]`, 1 or 3 channels).
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("intensity {v} outside [0,1]")));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// Converts 8-bit source pixels (channel-planar) as `v / 255`.
    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Image::new(height, width, channels, data)
    }

    /// Quantizes back to 8-bit by rounding `v * 255`. Exact inverse of
    /// [`Image::from_u8`] for unmodified pixels.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect()
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// Weight of the first image in a two-image mix, in `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixWeight(f64);

impl MixWeight {
    pub fn new(w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Config(format!("mix weight {w} outside [0,1]")));
        }
        Ok(MixWeight(w))
    }

    /// The paper-default equal weighting.
    pub const HALF: MixWeight = MixWeight(0.5);

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Per-pixel convex combination: `out[i] = w·a[i] + (1−w)·b[i]`.
///
/// Exactness contract (cf. `std::lerp` in C++20): equal inputs pass
/// through untouched for any weight, so `mix(a, a, w) = a` bit-for-bit
/// and `1 − w` rounding never leaks into self-mixes; the clamp pins the
/// convex-range invariant against last-ulp product rounding.
///
/// Rejects dimension mismatches; preserves dimensions and the `[0,1]` range.
pub fn mix_images(a: &Image, b: &Image, w: MixWeight) -> Result<Image> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "cannot mix {}x{}x{} with {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    let w = w.value();
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&av, &bv)| {
            if av == bv {
                av
            } else {
                (w * av + (1.0 - w) * bv).clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok(Image {
        height: a.height,
        width: a.width,
        channels: a.channels,
        data,
    })
}

/// Extracts an `out_h`×`out_w` window at a uniformly random valid offset.
/// Offsets are drawn independently per call from the supplied source.
pub fn random_crop<R: Rng + ?Sized>(
    img: &Image,
    out_h: usize,
    out_w: usize,
    rng: &mut R,
) -> Result<Image> {
    if out_h > img.height || out_w > img.width {
        return Err(Error::Shape(format!(
            "crop {out_h}x{out_w} larger than source {}x{}",
            img.height, img.width
        )));
    }
    let y0 = rng.gen_range(0..=img.height - out_h);
    let x0 = rng.gen_range(0..=img.width - out_w);
    Ok(crop_at(img, y0, x0, out_h, out_w))
}

/// Deterministic centered window; odd margins resolve toward the top-left
/// (offset = floor(margin / 2)).
pub fn center_crop(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h > img.height || out_w > img.width {
        return Err(Error::Shape(format!(
            "crop {out_h}x{out_w} larger than source {}x{}",
            img.height, img.width
        )));
    }
    let y0 = (img.height - out_h) / 2;
    let x0 = (img.width - out_w) / 2;
    Ok(crop_at(img, y0, x0, out_h, out_w))
}

fn crop_at(img: &Image, y0: usize, x0: usize, out_h: usize, out_w: usize) -> Image {
    let mut out = Image::zeros(out_h, out_w, img.channels);
    for c in 0..img.channels {
        for y in 0..out_h {
            let src = (c * img.height + y0 + y) * img.width + x0;
            let dst = (c * out_h + y) * out_w;
            out.data[dst..dst + out_w].copy_from_slice(&img.data[src..src + out_w]);
        }
    }
    out
}

/// Reverses column order per row per channel.
pub fn horizontal_flip(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..img.channels {
        for y in 0..img.height {
            let row = (c * img.height + y) * img.width;
            out.data[row..row + img.width].reverse();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img_from(h: usize, w: usize, c: usize, vals: &[f64]) -> Image {
        Image::new(h, w, c, vals.to_vec()).unwrap()
    }

    #[test]
    fn mix_is_elementwise_average() {
        let a = img_from(1, 1, 1, &[0.4]);
        let b = img_from(1, 1, 1, &[0.8]);
        let out = mix_images(&a, &b, MixWeight::HALF).unwrap();
        assert!((out.data()[0] - 0.6).abs() < 1e-12);
        // Exactly the convex-combination formula, bit for bit.
        assert_eq!(out.data()[0], 0.5 * 0.4 + 0.5 * 0.8);
    }

    #[test]
    fn mix_with_self_is_identity() {
        let a = img_from(2, 2, 1, &[0.1, 0.5, 0.9, 0.3]);
        for w in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let out = mix_images(&a, &a, MixWeight::new(w).unwrap()).unwrap();
            assert_eq!(out, a, "w={w}");
        }
    }

    #[test]
    fn mix_weight_zero_returns_second_image() {
        let a = img_from(1, 2, 1, &[0.2, 0.4]);
        let b = img_from(1, 2, 1, &[0.7, 0.1]);
        let out = mix_images(&a, &b, MixWeight::new(0.0).unwrap()).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn mix_rejects_shape_mismatch() {
        let a = Image::zeros(2, 2, 1);
        let b = Image::zeros(2, 3, 1);
        assert!(matches!(
            mix_images(&a, &b, MixWeight::HALF),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn mix_weight_range_checked() {
        assert!(MixWeight::new(-0.1).is_err());
        assert!(MixWeight::new(1.1).is_err());
        assert!(MixWeight::new(0.0).is_ok());
        assert!(MixWeight::new(1.0).is_ok());
    }

    #[test]
    fn image_invariants_checked() {
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 1, vec![-0.1]).is_err());
    }

    #[test]
    fn random_crop_offsets_uniform_over_valid_range() {
        // 32x32 -> 28x28 leaves 25 offsets; each should be seen with
        // frequency 0.04 +/- 0.01 over 10,000 draws.
        let src = Image::zeros(32, 32, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [[0u32; 5]; 5];
        // Re-derive the offset from the crop by marking the source.
        let mut marked = src.clone();
        for y in 0..32 {
            for x in 0..32 {
                marked.set(0, y, x, ((y * 32 + x) as f64) / 2000.0);
            }
        }
        for _ in 0..10_000 {
            let out = random_crop(&marked, 28, 28, &mut rng).unwrap();
            let id = (out.get(0, 0, 0) * 2000.0).round() as usize;
            counts[id / 32][id % 32] += 1;
        }
        for (y, row) in counts.iter().enumerate() {
            for (x, &n) in row.iter().enumerate() {
                let freq = f64::from(n) / 10_000.0;
                assert!(
                    (freq - 0.04).abs() <= 0.01,
                    "offset ({y},{x}) frequency {freq}"
                );
            }
        }
    }

    #[test]
    fn random_crop_full_size_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = img_from(2, 2, 1, &[0.1, 0.2, 0.3, 0.4]);
        let out = random_crop(&img, 2, 2, &mut rng).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn random_crop_rejects_oversize() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = Image::zeros(4, 4, 1);
        assert!(random_crop(&img, 5, 4, &mut rng).is_err());
        assert!(random_crop(&img, 4, 5, &mut rng).is_err());
    }

    #[test]
    fn random_crop_reproducible_for_fixed_seed() {
        let mut marked = Image::zeros(32, 32, 3);
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    marked.set(c, y, x, ((c * 1024 + y * 32 + x) as f64) / 4000.0);
                }
            }
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let a = random_crop(&marked, 28, 28, &mut r1).unwrap();
            let b = random_crop(&marked, 28, 28, &mut r2).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn center_crop_offsets() {
        // 32 -> 28 gives margin 4, offset 2; 33 -> 28 gives margin 5,
        // floor tie-break keeps offset 2.
        for (src_hw, want_off) in [(32usize, 2usize), (33, 2)] {
            let mut marked = Image::zeros(src_hw, src_hw, 1);
            for y in 0..src_hw {
                for x in 0..src_hw {
                    marked.set(0, y, x, ((y * src_hw + x) as f64) / 2000.0);
                }
            }
            let out = center_crop(&marked, 28, 28).unwrap();
            let id = (out.get(0, 0, 0) * 2000.0).round() as usize;
            assert_eq!(id / src_hw, want_off, "src {src_hw}");
            assert_eq!(id % src_hw, want_off, "src {src_hw}");
        }
    }

    #[test]
    fn center_crop_identity_and_oversize() {
        let img = img_from(2, 2, 1, &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(center_crop(&img, 2, 2).unwrap(), img);
        assert!(center_crop(&img, 3, 2).is_err());
    }

    #[test]
    fn flip_matches_definition() {
        let img = img_from(2, 2, 1, &[0.1, 0.2, 0.3, 0.4]);
        let out = horizontal_flip(&img);
        assert_eq!(out.data(), &[0.2, 0.1, 0.4, 0.3]);
    }

    #[test]
    fn flip_width_one_unchanged() {
        let img = img_from(3, 1, 1, &[0.1, 0.2, 0.3]);
        assert_eq!(horizontal_flip(&img), img);
    }

    proptest! {
        #[test]
        fn flip_is_involution(vals in proptest::collection::vec(0.0f64..=1.0, 48)) {
            let img = Image::new(4, 4, 3, vals).unwrap();
            prop_assert_eq!(horizontal_flip(&horizontal_flip(&img)), img);
        }

        #[test]
        fn mix_preserves_range_and_linearity(
            a in proptest::collection::vec(0.0f64..=1.0, 12),
            b in proptest::collection::vec(0.0f64..=1.0, 12),
            w in 0.0f64..=1.0,
        ) {
            let a = Image::new(2, 2, 3, a).unwrap();
            let b = Image::new(2, 2, 3, b).unwrap();
            let w = MixWeight::new(w).unwrap();
            let ab = mix_images(&a, &b, w).unwrap();
            let ba = mix_images(&b, &a, w).unwrap();
            for i in 0..12 {
                prop_assert!((0.0..=1.0).contains(&ab.data()[i]));
                // mix(a,b,w) + mix(b,a,w) = a + b elementwise
                let lhs = ab.data()[i] + ba.data()[i];
                let rhs = a.data()[i] + b.data()[i];
                prop_assert!((lhs - rhs).abs() <= 1e-12);
            }
        }

        #[test]
        fn mix_at_half_commutes_exactly(
            a in proptest::collection::vec(0.0f64..=1.0, 8),
            b in proptest::collection::vec(0.0f64..=1.0, 8),
        ) {
            let a = Image::new(2, 4, 1, a).unwrap();
            let b = Image::new(2, 4, 1, b).unwrap();
            let ab = mix_images(&a, &b, MixWeight::HALF).unwrap();
            let ba = mix_images(&b, &a, MixWeight::HALF).unwrap();
            prop_assert_eq!(ab, ba);
        }
    }
}
