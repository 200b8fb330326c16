//! End-to-end orchestration: restrict the search to the plausible region,
//! score candidate boxes via color filtering plus shape classification,
//! select the best box and extract the organ mask. Also hosts the
//! feature-driven pixel baseline and the shape-crop dataset builder.

use crate::anatomy::{candidate_boxes, clamp_to_frame, OrganId, Registry};
use crate::chroma::{classify_pixel, ColorCategory, ColorModel};
use crate::error::{Error, Result};
use crate::linear::{self, LinearModel};
use crate::raster::{BitMask, RasterImage, Rect, CANONICAL_HEIGHT, CANONICAL_WIDTH};
use crate::shapenet::{EvalContext, LabeledShape, ShapeNet, INPUT_SIDE, NONE_CLASS};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Candidate-grid step in pixels.
    pub stride: u32,
    /// Minimum class probability for a detection.
    pub threshold: f32,
    /// Reduce the winning box's mask to its largest 4-connected component.
    pub largest_component_only: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { stride: 10, threshold: 0.5, largest_component_only: true }
    }
}

impl PipelineConfig {
    fn validate(&self) -> Result<()> {
        if self.stride < 1 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument("threshold outside [0,1]".into()));
        }
        Ok(())
    }
}

/// Outcome of one organ search over the canonical frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub organ: OrganId,
    pub found: bool,
    /// Best-scoring candidate box, reported even when below threshold.
    pub bounding_box: Rect,
    /// Full-frame mask; empty when not found.
    pub mask: BitMask,
    pub score: f32,
}

/// Known placement of one organ in an annotated or synthetic image.
#[derive(Debug, Clone, PartialEq)]
pub struct OrganTruth {
    pub organ: OrganId,
    pub present: bool,
    pub bounding_box: Rect,
    /// Full-frame mask, empty when absent.
    pub mask: BitMask,
}

/// Per-pixel color-category indices for a whole image.
pub(crate) fn category_map(img: &RasterImage, model: &ColorModel) -> Vec<u8> {
    img.pixels()
        .iter()
        .map(|&[r, g, b]| classify_pixel(model, r, g, b).class_index() as u8)
        .collect()
}

/// Shape image of `rect` read from a precomputed category map; equivalent
/// to `chroma::filter_to_shape` on the source image.
fn shape_from_map(map: &[u8], img_w: u32, rect: Rect, category: ColorCategory) -> BitMask {
    let want = category.class_index() as u8;
    let mut mask = BitMask::new_empty(rect.w, rect.h);
    for y in 0..rect.h {
        let row = (rect.y + y) as usize * img_w as usize + rect.x as usize;
        for x in 0..rect.w {
            if map[row + x as usize] == want {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Searches one organ. Every candidate box is filtered to its shape image
/// and scored by the organ's class probability; the best-scoring box wins
/// with ties resolved by scan order. Scores below the threshold yield
/// `found = false` and an empty mask.
pub fn segment_organ(
    img: &RasterImage,
    organ: OrganId,
    registry: &Registry,
    color_model: &ColorModel,
    net: &ShapeNet,
    cfg: &PipelineConfig,
) -> Result<SegmentationResult> {
    cfg.validate()?;
    check_canonical(img)?;
    let map = category_map(img, color_model);
    segment_with_map(&map, organ, registry, net, cfg)
}

/// Searches every organ in registry order, sharing one color-category map.
/// Element-wise identical to per-organ `segment_organ` calls.
pub fn segment_all_organs(
    img: &RasterImage,
    registry: &Registry,
    color_model: &ColorModel,
    net: &ShapeNet,
    cfg: &PipelineConfig,
) -> Result<Vec<SegmentationResult>> {
    cfg.validate()?;
    check_canonical(img)?;
    let map = category_map(img, color_model);
    registry
        .iter()
        .map(|spec| segment_with_map(&map, spec.organ, registry, net, cfg))
        .collect()
}

fn check_canonical(img: &RasterImage) -> Result<()> {
    if !img.is_canonical() {
        return Err(Error::InvalidArgument(format!(
            "segmentation expects the canonical {CANONICAL_WIDTH}x{CANONICAL_HEIGHT} frame, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

fn segment_with_map(
    map: &[u8],
    organ: OrganId,
    registry: &Registry,
    net: &ShapeNet,
    cfg: &PipelineConfig,
) -> Result<SegmentationResult> {
    let spec = registry.get(organ);
    let class = organ.class_index();
    let candidates = candidate_boxes(&spec.region, spec.box_w, spec.box_h, cfg.stride)?;
    let mut ctx = EvalContext::default();
    // All-empty shape images resize to the same all-zero input, so their
    // shared score is computed once.
    let mut empty_score: Option<f32> = None;
    let mut best_rect = candidates[0];
    let mut best_score = f32::NEG_INFINITY;
    for &rect in &candidates {
        let shape = shape_from_map(map, CANONICAL_WIDTH, rect, spec.category);
        let score = if shape.is_empty() {
            *empty_score
                .get_or_insert_with(|| net.class_probability_with(&mut ctx, &shape, class))
        } else {
            net.class_probability_with(&mut ctx, &shape, class)
        };
        if score > best_score {
            best_score = score;
            best_rect = rect;
        }
    }
    let found = best_score >= cfg.threshold;
    let mask = if found {
        let shape = shape_from_map(map, CANONICAL_WIDTH, best_rect, spec.category);
        let shape =
            if cfg.largest_component_only { largest_component(&shape) } else { shape };
        embed_full_frame(&shape, best_rect)
    } else {
        BitMask::new_empty(CANONICAL_WIDTH, CANONICAL_HEIGHT)
    };
    Ok(SegmentationResult { organ, found, bounding_box: best_rect, mask, score: best_score })
}

fn embed_full_frame(shape: &BitMask, rect: Rect) -> BitMask {
    let mut full = BitMask::new_empty(CANONICAL_WIDTH, CANONICAL_HEIGHT);
    for y in 0..shape.height() {
        for x in 0..shape.width() {
            if shape.get(x, y) {
                full.set(rect.x + x, rect.y + y, true);
            }
        }
    }
    full
}

/// Keeps only the largest 4-connected component; among equal sizes the
/// component discovered first in row-major scan order survives.
pub fn largest_component(mask: &BitMask) -> BitMask {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.bits();
    let mut labels: Vec<u32> = vec![0; bits.len()];
    let mut best_label = 0u32;
    let mut best_size = 0usize;
    let mut next_label = 0u32;
    let mut stack = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        next_label += 1;
        let mut size = 0usize;
        stack.push(start);
        labels[start] = next_label;
        while let Some(i) = stack.pop() {
            size += 1;
            let x = i % w;
            let y = i / w;
            if x > 0 && bits[i - 1] && labels[i - 1] == 0 {
                labels[i - 1] = next_label;
                stack.push(i - 1);
            }
            if x + 1 < w && bits[i + 1] && labels[i + 1] == 0 {
                labels[i + 1] = next_label;
                stack.push(i + 1);
            }
            if y > 0 && bits[i - w] && labels[i - w] == 0 {
                labels[i - w] = next_label;
                stack.push(i - w);
            }
            if y + 1 < h && bits[i + w] && labels[i + w] == 0 {
                labels[i + w] = next_label;
                stack.push(i + w);
            }
        }
        if size > best_size {
            best_size = size;
            best_label = next_label;
        }
    }
    let out_bits = labels.iter().map(|&l| l != 0 && l == best_label).collect();
    BitMask::from_bits(mask.width(), mask.height(), out_bits)
        .expect("label buffer matches mask dimensions")
}

/// `organ,found,box_x,box_y,box_w,box_h,score` rows for a result set.
pub fn render_results_csv(results: &[SegmentationResult]) -> String {
    let mut csv = String::from("organ,found,box_x,box_y,box_w,box_h,score\n");
    for r in results {
        writeln!(
            csv,
            "{},{},{},{},{},{},{:.6}",
            r.organ,
            r.found,
            r.bounding_box.x,
            r.bounding_box.y,
            r.bounding_box.w,
            r.bounding_box.h,
            r.score
        )
        .expect("writing to a String cannot fail");
    }
    csv
}

// ---------------------------------------------------------------------
// Feature-driven pixel baseline
// ---------------------------------------------------------------------

const BASELINE_FEATURES: usize = 5;
const BASELINE_CLASSES: usize = 6;

/// Linear multiclass pixel classifier over position and color features
/// `(x/2000, y/1000, r/255, g/255, b/255)`, six classes (organs + none).
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    inner: LinearModel,
}

/// One labeled baseline training pixel; label is an organ class index or
/// the none class (5).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineSample {
    pub x: u32,
    pub y: u32,
    pub rgb: [u8; 3],
    pub label: usize,
}

fn baseline_features(x: u32, y: u32, rgb: [u8; 3]) -> [f32; BASELINE_FEATURES] {
    [
        x as f32 / CANONICAL_WIDTH as f32,
        y as f32 / CANONICAL_HEIGHT as f32,
        rgb[0] as f32 / 255.0,
        rgb[1] as f32 / 255.0,
        rgb[2] as f32 / 255.0,
    ]
}

/// Fits the baseline by the same seeded SGD machinery as the color model.
pub fn train_baseline(
    samples: &[BaselineSample],
    epochs: usize,
    learning_rate: f32,
    seed: u64,
) -> Result<BaselineModel> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no baseline samples".into()));
    }
    let mut features = Vec::with_capacity(samples.len() * BASELINE_FEATURES);
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        if s.label >= BASELINE_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "baseline label {} out of range 0..{BASELINE_CLASSES}",
                s.label
            )));
        }
        features.extend_from_slice(&baseline_features(s.x, s.y, s.rgb));
        labels.push(s.label);
    }
    let (inner, _) = linear::train_sgd(
        &features,
        &labels,
        BASELINE_CLASSES,
        BASELINE_FEATURES,
        epochs,
        learning_rate,
        seed,
    )?;
    Ok(BaselineModel { inner })
}

/// Full-frame mask of pixels whose argmax baseline class is `organ`.
pub fn baseline_pixel_segment(
    img: &RasterImage,
    organ: OrganId,
    model: &BaselineModel,
) -> Result<BitMask> {
    check_canonical(img)?;
    let class = organ.class_index();
    let mut mask = BitMask::new_empty(img.width(), img.height());
    let mut scores = [0.0f32; BASELINE_CLASSES];
    for y in 0..img.height() {
        for x in 0..img.width() {
            let features = baseline_features(x, y, img.get(x, y));
            model.inner.scores(&features, &mut scores);
            if linear::argmax(&scores) == class {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}

/// Samples labeled baseline pixels from an annotated image: up to
/// `per_organ` pixels from each present organ mask and `background`
/// pixels from everything else.
pub fn sample_baseline_pixels(
    img: &RasterImage,
    truths: &[OrganTruth],
    per_organ: usize,
    background: usize,
    rng: &mut impl Rng,
) -> Vec<BaselineSample> {
    let mut samples = Vec::new();
    for truth in truths {
        if !truth.present {
            continue;
        }
        let set_bits: Vec<usize> = truth
            .mask
            .bits()
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect();
        if set_bits.is_empty() {
            continue;
        }
        for _ in 0..per_organ {
            let i = set_bits[rng.gen_range(0..set_bits.len())];
            let x = (i % img.width() as usize) as u32;
            let y = (i / img.width() as usize) as u32;
            samples.push(BaselineSample {
                x,
                y,
                rgb: img.get(x, y),
                label: truth.organ.class_index(),
            });
        }
    }
    let mut drawn = 0usize;
    while drawn < background {
        let x = rng.gen_range(0..img.width());
        let y = rng.gen_range(0..img.height());
        let in_organ = truths.iter().any(|t| t.present && t.mask.get(x, y));
        if in_organ {
            continue;
        }
        samples.push(BaselineSample { x, y, rgb: img.get(x, y), label: NONE_CLASS });
        drawn += 1;
    }
    samples
}

/// Samples labeled color-training pixels from an annotated image: organ
/// pixels labeled with their registry category, everything else labeled
/// background.
pub fn sample_color_pixels(
    img: &RasterImage,
    truths: &[OrganTruth],
    registry: &Registry,
    per_organ: usize,
    background: usize,
    rng: &mut impl Rng,
) -> Vec<crate::chroma::PixelSample> {
    use crate::chroma::PixelSample;
    let mut samples = Vec::new();
    for truth in truths {
        if !truth.present {
            continue;
        }
        let set_bits: Vec<usize> = truth
            .mask
            .bits()
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect();
        if set_bits.is_empty() {
            continue;
        }
        let label = registry.get(truth.organ).category;
        for _ in 0..per_organ {
            let i = set_bits[rng.gen_range(0..set_bits.len())];
            let x = (i % img.width() as usize) as u32;
            let y = (i / img.width() as usize) as u32;
            let [r, g, b] = img.get(x, y);
            samples.push(PixelSample { r, g, b, label });
        }
    }
    let mut drawn = 0usize;
    while drawn < background {
        let x = rng.gen_range(0..img.width());
        let y = rng.gen_range(0..img.height());
        if truths.iter().any(|t| t.present && t.mask.get(x, y)) {
            continue;
        }
        let [r, g, b] = img.get(x, y);
        samples.push(PixelSample { r, g, b, label: ColorCategory::Background });
        drawn += 1;
    }
    samples
}

// ---------------------------------------------------------------------
// Shape-crop dataset builder
// ---------------------------------------------------------------------

/// Crop-generation settings for shape-classifier training data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropConfig {
    /// Positive boxes jitter uniformly within +-jitter pixels per axis.
    pub jitter: u32,
    /// Random candidate draws per organ when hunting negatives.
    pub negative_draws: usize,
    /// Negatives kept per organ (highest-coverage candidates first).
    pub negatives_per_organ: usize,
    pub seed: u64,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self { jitter: 12, negative_draws: 16, negatives_per_organ: 1, seed: 0 }
    }
}

/// Fraction of an organ's truth mask a box must contain to count as a
/// clean positive.
const FULL_CONTAINMENT: f64 = 0.999;
/// Boxes containing more than this fraction but less than full containment
/// are ambiguous and skipped.
const NEGATIVE_CONTAINMENT: f64 = 0.9;

/// Builds labeled 128x128 shape crops from one annotated canonical image:
/// per organ one jittered positive around the truth box plus
/// content-biased negatives drawn from the plausible region. Crops are
/// labeled by what they fully contain, so a box that captures a whole
/// same-category organ is labeled as that organ.
pub fn build_shape_dataset(
    img: &RasterImage,
    truths: &[OrganTruth],
    registry: &Registry,
    color_model: &ColorModel,
    cfg: &CropConfig,
) -> Result<Vec<LabeledShape>> {
    check_canonical(img)?;
    let map = category_map(img, color_model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut crops = Vec::new();
    for spec in registry.iter() {
        let same_category: Vec<&OrganTruth> = truths
            .iter()
            .filter(|t| {
                t.present
                    && !t.mask.is_empty()
                    && registry.get(t.organ).category == spec.category
            })
            .collect();
        let truth = truths.iter().find(|t| t.organ == spec.organ);

        // jittered positive around the truth box
        if let Some(truth) = truth.filter(|t| t.present && !t.mask.is_empty()) {
            let dx = rng.gen_range(-(cfg.jitter as i64)..=cfg.jitter as i64);
            let dy = rng.gen_range(-(cfg.jitter as i64)..=cfg.jitter as i64);
            let a = (truth.bounding_box.x as i64 + dx).max(0) as u32;
            let b = (truth.bounding_box.y as i64 + dy).max(0) as u32;
            let rect = clamp_to_frame(a, b, spec.box_w, spec.box_h);
            if let Some(label) = label_crop(rect, &same_category) {
                crops.push(crop_to_shape(&map, rect, spec.category, label));
            }
        }

        // content-biased negatives sampled from the plausible region
        let mut found: Vec<(usize, Rect)> = Vec::new();
        for _ in 0..cfg.negative_draws {
            let a = rng.gen_range(spec.region.amin..=spec.region.amax);
            let b = rng.gen_range(spec.region.bmin..=spec.region.bmax);
            let rect = clamp_to_frame(a, b, spec.box_w, spec.box_h);
            match label_crop(rect, &same_category) {
                Some(NONE_CLASS) => {
                    let coverage = shape_from_map(&map, CANONICAL_WIDTH, rect, spec.category)
                        .count_ones();
                    found.push((coverage, rect));
                }
                _ => continue,
            }
        }
        found.sort_by(|a, b| b.0.cmp(&a.0));
        for &(_, rect) in found.iter().take(cfg.negatives_per_organ) {
            crops.push(crop_to_shape(&map, rect, spec.category, NONE_CLASS));
        }
    }
    Ok(crops)
}

/// Labels a box by containment: the largest same-category organ fully
/// inside it wins; boxes in the ambiguous band yield `None` (skip).
fn label_crop(rect: Rect, same_category: &[&OrganTruth]) -> Option<usize> {
    let mut label = NONE_CLASS;
    let mut label_size = 0usize;
    for truth in same_category {
        let total = truth.mask.count_ones();
        let mut inside = 0usize;
        for y in rect.y..rect.y + rect.h {
            for x in rect.x..rect.x + rect.w {
                inside += truth.mask.get(x, y) as usize;
            }
        }
        let containment = inside as f64 / total as f64;
        if containment >= FULL_CONTAINMENT {
            if total > label_size {
                label = truth.organ.class_index();
                label_size = total;
            }
        } else if containment > NEGATIVE_CONTAINMENT {
            return None;
        }
    }
    Some(label)
}

fn crop_to_shape(map: &[u8], rect: Rect, category: ColorCategory, label: usize) -> LabeledShape {
    let shape = shape_from_map(map, CANONICAL_WIDTH, rect, category);
    let plane: Vec<f32> =
        shape.bits().iter().map(|&b| if b { 1.0f32 } else { 0.0 }).collect();
    let pixels = crate::shapenet::resize_plane(
        &plane,
        rect.w as usize,
        rect.h as usize,
        INPUT_SIDE,
        INPUT_SIDE,
    );
    LabeledShape { pixels, label }
}
