//! Pixel-level color-category classification and conversion of candidate
//! box crops into binary organ shape images.

use crate::error::{Error, Result};
use crate::linear::{self, LinearModel};
use crate::raster::{BitMask, RasterImage, Rect};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

const COLOR_MODEL_MAGIC: &[u8; 5] = b"OSCM1";
const CLASSES: usize = 5;
const FEATURES: usize = 3;

/// The four organ color categories plus an explicit background class.
/// Liver and kidney deliberately share CAT4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorCategory {
    Cat1,
    Cat2,
    Cat3,
    Cat4,
    Background,
}

impl ColorCategory {
    pub const ALL: [ColorCategory; 5] = [
        ColorCategory::Cat1,
        ColorCategory::Cat2,
        ColorCategory::Cat3,
        ColorCategory::Cat4,
        ColorCategory::Background,
    ];

    /// Fixed class order used by the model and its file format.
    pub fn class_index(&self) -> usize {
        match self {
            ColorCategory::Cat1 => 0,
            ColorCategory::Cat2 => 1,
            ColorCategory::Cat3 => 2,
            ColorCategory::Cat4 => 3,
            ColorCategory::Background => 4,
        }
    }

    pub fn from_class_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(&self) -> &'static str {
        match self {
            ColorCategory::Cat1 => "CAT1",
            ColorCategory::Cat2 => "CAT2",
            ColorCategory::Cat3 => "CAT3",
            ColorCategory::Cat4 => "CAT4",
            ColorCategory::Background => "BACKGROUND",
        }
    }
}

impl fmt::Display for ColorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ColorCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CAT1" => Ok(ColorCategory::Cat1),
            "CAT2" => Ok(ColorCategory::Cat2),
            "CAT3" => Ok(ColorCategory::Cat3),
            "CAT4" => Ok(ColorCategory::Cat4),
            "BACKGROUND" => Ok(ColorCategory::Background),
            other => Err(Error::InvalidArgument(format!("unknown color category '{other}'"))),
        }
    }
}

/// A labeled training pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelSample {
    pub r: u8,
    pub g: u8,
    pub b: u8,
    pub label: ColorCategory,
}

/// Linear multiclass pixel classifier over [0,1]-scaled RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorModel {
    inner: LinearModel,
}

impl ColorModel {
    fn from_linear(inner: LinearModel) -> Self {
        debug_assert_eq!(inner.classes, CLASSES);
        debug_assert_eq!(inner.features, FEATURES);
        Self { inner }
    }

    pub fn weights(&self) -> &[f32] {
        &self.inner.weights
    }

    pub fn biases(&self) -> &[f32] {
        &self.inner.biases
    }

    /// Test-only constructor for handcrafted weights.
    pub fn from_raw(weights: [[f32; 3]; 5], biases: [f32; 5]) -> Self {
        let mut inner = LinearModel::zeros(CLASSES, FEATURES);
        for (k, row) in weights.iter().enumerate() {
            inner.weights[k * FEATURES..(k + 1) * FEATURES].copy_from_slice(row);
        }
        inner.biases.copy_from_slice(&biases);
        Self { inner }
    }

    #[inline]
    pub(crate) fn class_scores(&self, r: u8, g: u8, b: u8) -> [f32; 5] {
        let x = [r as f32 / 255.0, g as f32 / 255.0, b as f32 / 255.0];
        let mut out = [0.0f32; 5];
        self.inner.scores(&x, &mut out);
        out
    }
}

/// Result of fitting a color model: the model plus the accuracy it reaches
/// on its own training pixels.
#[derive(Debug, Clone)]
pub struct ColorTraining {
    pub model: ColorModel,
    pub train_accuracy: f64,
}

/// Fits the multinomial-logistic pixel classifier by seeded SGD.
pub fn train_color_model(
    samples: &[PixelSample],
    epochs: usize,
    learning_rate: f32,
    seed: u64,
) -> Result<ColorTraining> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no pixel samples".into()));
    }
    let mut label_seen = [false; CLASSES];
    for s in samples {
        label_seen[s.label.class_index()] = true;
    }
    if label_seen.iter().filter(|&&seen| seen).count() < 2 {
        return Err(Error::Training(
            "color training data must contain at least two distinct labels".into(),
        ));
    }
    let mut features = Vec::with_capacity(samples.len() * FEATURES);
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        features.extend_from_slice(&[
            s.r as f32 / 255.0,
            s.g as f32 / 255.0,
            s.b as f32 / 255.0,
        ]);
        labels.push(s.label.class_index());
    }
    let (inner, train_accuracy) =
        linear::train_sgd(&features, &labels, CLASSES, FEATURES, epochs, learning_rate, seed)?;
    Ok(ColorTraining { model: ColorModel::from_linear(inner), train_accuracy })
}

/// Argmax color category for one pixel; ties resolve to the lowest index.
#[inline]
pub fn classify_pixel(model: &ColorModel, r: u8, g: u8, b: u8) -> ColorCategory {
    let scores = model.class_scores(r, g, b);
    ColorCategory::from_class_index(linear::argmax(&scores)).expect("class index in range")
}

/// Binary shape image of a candidate box: a bit is set where the pixel's
/// color category matches the organ's category.
pub fn filter_to_shape(
    img: &RasterImage,
    rect: Rect,
    model: &ColorModel,
    category: ColorCategory,
) -> Result<BitMask> {
    if category == ColorCategory::Background {
        return Err(Error::InvalidArgument(
            "cannot filter to the background category".into(),
        ));
    }
    if !rect.fits_within(img.width(), img.height()) {
        return Err(Error::Bounds(format!(
            "rect {rect:?} exceeds image bounds {}x{}",
            img.width(),
            img.height()
        )));
    }
    let mut mask = BitMask::new_empty(rect.w, rect.h);
    for y in 0..rect.h {
        for x in 0..rect.w {
            let [r, g, b] = img.get(rect.x + x, rect.y + y);
            if classify_pixel(model, r, g, b) == category {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}

/// Binary model file: magic `OSCM1`, little-endian u32 class count (5) and
/// feature count (3), then f32 weights row-major and f32 biases.
pub fn save_color_model(model: &ColorModel, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(COLOR_MODEL_MAGIC)?;
    file.write_all(&(CLASSES as u32).to_le_bytes())?;
    file.write_all(&(FEATURES as u32).to_le_bytes())?;
    for w in model.inner.weights.iter().chain(&model.inner.biases) {
        file.write_all(&w.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_color_model(path: &Path) -> Result<ColorModel> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 5];
    read_exact(&mut file, &mut magic)?;
    if &magic != COLOR_MODEL_MAGIC {
        return Err(Error::Format("bad color model magic".into()));
    }
    let classes = read_u32(&mut file)? as usize;
    let features = read_u32(&mut file)? as usize;
    if classes != CLASSES || features != FEATURES {
        return Err(Error::Format(format!(
            "unexpected color model shape {classes}x{features}, expected {CLASSES}x{FEATURES}"
        )));
    }
    let mut inner = LinearModel::zeros(CLASSES, FEATURES);
    for slot in inner.weights.iter_mut().chain(inner.biases.iter_mut()) {
        *slot = read_f32(&mut file)?;
        if !slot.is_finite() {
            return Err(Error::Format("non-finite weight in color model file".into()));
        }
    }
    Ok(ColorModel::from_linear(inner))
}

fn read_exact(reader: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|_| Error::Format("truncated model file".into()))
}

pub(crate) fn read_u32(reader: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(reader, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_f32(reader: &mut impl Read) -> Result<f32> {
    let mut buf = [0u8; 4];
    read_exact(reader, &mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Five well-separated centroids, one per class, pairwise >= 120 apart
    /// per channel maximum.
    pub(crate) const PALETTE: [(ColorCategory, [u8; 3]); 5] = [
        (ColorCategory::Cat1, [230, 40, 40]),
        (ColorCategory::Cat2, [40, 40, 230]),
        (ColorCategory::Cat3, [230, 230, 40]),
        (ColorCategory::Cat4, [40, 230, 40]),
        (ColorCategory::Background, [230, 230, 230]),
    ];

    fn noisy_palette_samples(per_class: usize, noise: i32, seed: u64) -> Vec<PixelSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::new();
        for _ in 0..per_class {
            for (label, centroid) in PALETTE {
                let mut jitter = |v: u8| {
                    (v as i32 + rng.gen_range(-noise..=noise)).clamp(0, 255) as u8
                };
                samples.push(PixelSample {
                    r: jitter(centroid[0]),
                    g: jitter(centroid[1]),
                    b: jitter(centroid[2]),
                    label,
                });
            }
        }
        samples
    }

    fn nearest_centroid(r: u8, g: u8, b: u8) -> ColorCategory {
        let mut best = ColorCategory::Cat1;
        let mut best_d = i64::MAX;
        for (label, c) in PALETTE {
            let d = (r as i64 - c[0] as i64).pow(2)
                + (g as i64 - c[1] as i64).pow(2)
                + (b as i64 - c[2] as i64).pow(2);
            if d < best_d {
                best_d = d;
                best = label;
            }
        }
        best
    }

    #[test]
    fn palette_centroids_are_far_apart() {
        for (i, (_, a)) in PALETTE.iter().enumerate() {
            for (_, b) in PALETTE.iter().skip(i + 1) {
                let linf = (0..3).map(|c| (a[c] as i32 - b[c] as i32).abs()).max().unwrap();
                assert!(linf >= 120, "{a:?} vs {b:?} only {linf} apart");
            }
        }
    }

    #[test]
    fn training_reaches_perfect_accuracy_and_matches_centroid_oracle() {
        let samples = noisy_palette_samples(60, 10, 3);
        let trained = train_color_model(&samples, 120, 0.6, 3).unwrap();
        assert_eq!(trained.train_accuracy, 1.0);
        for s in &samples {
            let predicted = classify_pixel(&trained.model, s.r, s.g, s.b);
            assert_eq!(predicted, nearest_centroid(s.r, s.g, s.b));
            assert_eq!(predicted, s.label);
        }
    }

    #[test]
    fn single_class_input_is_training_error() {
        let samples = vec![PixelSample { r: 1, g: 2, b: 3, label: ColorCategory::Cat1 }; 10];
        assert!(matches!(
            train_color_model(&samples, 10, 0.1, 0).unwrap_err(),
            Error::Training(_)
        ));
    }

    #[test]
    fn empty_input_is_argument_error() {
        assert!(matches!(
            train_color_model(&[], 10, 0.1, 0).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn training_is_seed_deterministic() {
        let samples = noisy_palette_samples(20, 10, 7);
        let a = train_color_model(&samples, 40, 0.5, 42).unwrap();
        let b = train_color_model(&samples, 40, 0.5, 42).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn classify_is_invariant_to_constant_score_shift() {
        let samples = noisy_palette_samples(20, 10, 5);
        let trained = train_color_model(&samples, 60, 0.5, 5).unwrap();
        let mut shifted = trained.model.clone();
        for b in shifted.inner.biases.iter_mut() {
            *b += 7.5;
        }
        for s in &samples {
            assert_eq!(
                classify_pixel(&trained.model, s.r, s.g, s.b),
                classify_pixel(&shifted, s.r, s.g, s.b)
            );
        }
    }

    #[test]
    fn classify_is_invariant_to_positive_scaling() {
        let samples = noisy_palette_samples(20, 10, 6);
        let trained = train_color_model(&samples, 60, 0.5, 6).unwrap();
        let mut scaled = trained.model.clone();
        for w in scaled.inner.weights.iter_mut().chain(scaled.inner.biases.iter_mut()) {
            *w *= 3.25;
        }
        for s in &samples {
            assert_eq!(
                classify_pixel(&trained.model, s.r, s.g, s.b),
                classify_pixel(&scaled, s.r, s.g, s.b)
            );
        }
    }

    #[test]
    fn exact_tie_resolves_to_lowest_index() {
        let model = ColorModel::from_raw([[0.0; 3]; 5], [1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(classify_pixel(&model, 10, 20, 30), ColorCategory::Cat1);
    }

    #[test]
    fn filter_matches_per_pixel_classification() {
        let samples = noisy_palette_samples(30, 10, 8);
        let trained = train_color_model(&samples, 80, 0.5, 8).unwrap();
        let cat1 = PALETTE[0].1;
        let bg = PALETTE[4].1;
        let mut img = RasterImage::filled(16, 12, bg);
        for y in 2..7 {
            for x in 3..9 {
                img.set(x, y, cat1);
            }
        }
        let rect = Rect::new(1, 1, 12, 9).unwrap();
        let mask = filter_to_shape(&img, rect, &trained.model, ColorCategory::Cat1).unwrap();
        assert_eq!((mask.width(), mask.height()), (rect.w, rect.h));
        for y in 0..rect.h {
            for x in 0..rect.w {
                let [r, g, b] = img.get(rect.x + x, rect.y + y);
                let expect = classify_pixel(&trained.model, r, g, b) == ColorCategory::Cat1;
                assert_eq!(mask.get(x, y), expect, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn filter_full_category_crop_sets_all_bits() {
        let samples = noisy_palette_samples(30, 10, 9);
        let trained = train_color_model(&samples, 80, 0.5, 9).unwrap();
        let img = RasterImage::filled(8, 8, PALETTE[2].1);
        let rect = Rect::new(0, 0, 8, 8).unwrap();
        let mask = filter_to_shape(&img, rect, &trained.model, ColorCategory::Cat3).unwrap();
        assert_eq!(mask.count_ones(), 64);
        let bg_img = RasterImage::filled(8, 8, PALETTE[4].1);
        let empty = filter_to_shape(&bg_img, rect, &trained.model, ColorCategory::Cat3).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn filter_background_category_is_argument_error() {
        let model = ColorModel::from_raw([[0.0; 3]; 5], [0.0; 5]);
        let img = RasterImage::filled(4, 4, [0, 0, 0]);
        let rect = Rect::new(0, 0, 2, 2).unwrap();
        assert!(matches!(
            filter_to_shape(&img, rect, &model, ColorCategory::Background).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn model_file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let samples = noisy_palette_samples(20, 10, 10);
        let trained = train_color_model(&samples, 40, 0.5, 10).unwrap();
        let path = dir.path().join("color.oscm");
        save_color_model(&trained.model, &path).unwrap();
        let loaded = load_color_model(&path).unwrap();
        assert_eq!(loaded, trained.model);
    }

    #[test]
    fn model_file_bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.oscm");
        std::fs::write(&path, b"XXXXX0000000000000000").unwrap();
        assert!(matches!(load_color_model(&path).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn model_file_truncated_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let samples = noisy_palette_samples(20, 10, 11);
        let trained = train_color_model(&samples, 40, 0.5, 11).unwrap();
        let path = dir.path().join("trunc.oscm");
        save_color_model(&trained.model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 6]).unwrap();
        assert!(matches!(load_color_model(&path).unwrap_err(), Error::Format(_)));
    }
}
