//! Deterministic synthetic whole-body cross-section generator with exact
//! ground-truth masks and boxes. Placement honors the registry's
//! plausible regions; liver and kidney share one palette color so shape,
//! not color, must disambiguate them; category-colored distractor blobs
//! (rings, stars, bars) scattered through the body keep pixel-level
//! classification honestly hard.

use crate::anatomy::{clamp_to_frame, OrganId, Registry};
use crate::chroma::ColorCategory;
use crate::error::{Error, Result};
use crate::pipeline::OrganTruth;
use crate::raster::{encode_mask, save_image, BitMask, RasterImage, Rect, CANONICAL_HEIGHT, CANONICAL_WIDTH};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Canvas color outside the body silhouette.
pub const CANVAS_COLOR: [u8; 3] = [245, 245, 245];
/// Low-saturation body silhouette color.
pub const BODY_COLOR: [u8; 3] = [205, 185, 160];

/// Palette centroid of each color category; pairwise at least 100 apart
/// in max channel distance so a linear pixel classifier can separate them.
pub fn category_color(category: ColorCategory) -> [u8; 3] {
    match category {
        ColorCategory::Cat1 => [230, 60, 50],
        ColorCategory::Cat2 => [40, 90, 230],
        ColorCategory::Cat3 => [250, 210, 40],
        ColorCategory::Cat4 => [60, 200, 90],
        ColorCategory::Background => BODY_COLOR,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomParams {
    pub seed: u64,
    /// Per-pixel uniform RGB jitter amplitude.
    pub noise: u8,
    /// Fraction of each plausible-region extent used for placement,
    /// centered; 1.0 samples the full region.
    pub placement_jitter: f64,
    /// Per-organ presence probability in canonical organ order.
    pub presence: [f64; 5],
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self { seed: 0, noise: 12, placement_jitter: 1.0, presence: [1.0; 5] }
    }
}

impl PhantomParams {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.placement_jitter) {
            return Err(Error::InvalidArgument("placement jitter outside [0,1]".into()));
        }
        if self.presence.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("presence probability outside [0,1]".into()));
        }
        Ok(())
    }
}

/// A synthetic cross-section with exact per-organ ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    pub image: RasterImage,
    /// One entry per registry organ, in registry order.
    pub organs: Vec<OrganTruth>,
}

/// Shape placed inside a clamped truth box, inset by per-organ margins.
fn shape_rect(organ: OrganId, bounding_box: Rect) -> Rect {
    let (fill_w, fill_h) = match organ {
        OrganId::Brain => (0.92, 0.92),
        OrganId::Heart => (0.5, 0.5),
        OrganId::Liver => (0.90, 0.90),
        OrganId::Kidney => (0.80, 0.80),
        OrganId::Spine => (0.92, 0.80),
    };
    let sw = ((bounding_box.w as f64 * fill_w).round() as u32).max(1);
    let sh = ((bounding_box.h as f64 * fill_h).round() as u32).max(1);
    Rect {
        x: bounding_box.x + (bounding_box.w - sw) / 2,
        y: bounding_box.y + (bounding_box.h - sh) / 2,
        w: sw,
        h: sh,
    }
}

/// Canonical organ silhouettes: brain a large ellipse, heart a small one,
/// liver a two-lobe blob, kidney a bean with a bite, spine a segmented
/// band joined by a cord.
fn organ_predicate(organ: OrganId, s: Rect, x: u32, y: u32) -> bool {
    // normalized coordinates in [-1, 1] within the shape rect
    let u = (x as f64 - s.x as f64) / s.w as f64 * 2.0 - 1.0;
    let v = (y as f64 - s.y as f64) / s.h as f64 * 2.0 - 1.0;
    match organ {
        OrganId::Brain | OrganId::Heart => u * u + v * v <= 1.0,
        OrganId::Liver => {
            let lobe1 = ((u + 0.25) / 0.75).powi(2) + ((v + 0.35) / 0.62).powi(2) <= 1.0;
            let lobe2 = ((u - 0.30) / 0.66).powi(2) + ((v - 0.38) / 0.58).powi(2) <= 1.0;
            lobe1 || lobe2
        }
        OrganId::Kidney => {
            let body = u * u + v * v <= 1.0;
            let bite = ((u - 0.95) / 0.55).powi(2) + (v / 0.45).powi(2) <= 1.0;
            body && !bite
        }
        OrganId::Spine => {
            let cord = v.abs() <= 0.18;
            // seven vertebra blocks along the band
            let t = (u + 1.0) / 2.0 * 7.0;
            let within = t - t.floor();
            let block = (0.12..=0.88).contains(&within) && v.abs() <= 1.0;
            cord || block
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Distractor {
    category: ColorCategory,
    kind: u8,
    cx: f64,
    cy: f64,
    radius: f64,
    phase: f64,
}

impl Distractor {
    fn contains(&self, x: u32, y: u32) -> bool {
        let dx = x as f64 - self.cx;
        let dy = y as f64 - self.cy;
        match self.kind {
            // ring
            0 => {
                let d = (dx * dx + dy * dy).sqrt();
                d <= self.radius && d >= self.radius * 0.55
            }
            // five-lobed star blob
            1 => {
                let d = (dx * dx + dy * dy).sqrt();
                let theta = dy.atan2(dx);
                d <= self.radius * (0.6 + 0.4 * (5.0 * theta + self.phase).cos())
            }
            // rotated thin bar
            _ => {
                let (sin_p, cos_p) = self.phase.sin_cos();
                let u = cos_p * dx + sin_p * dy;
                let v = -sin_p * dx + cos_p * dy;
                u.abs() <= self.radius && v.abs() <= self.radius * 0.22
            }
        }
    }

    fn bbox(&self) -> (i64, i64, i64, i64) {
        let r = self.radius.ceil() as i64;
        (self.cx as i64 - r, self.cy as i64 - r, self.cx as i64 + r, self.cy as i64 + r)
    }
}

const BODY_CENTER: (f64, f64) = (1000.0, 510.0);
const BODY_RADII: (f64, f64) = (920.0, 400.0);
const PLACEMENT_RETRIES: usize = 80;
const DISTRACTOR_RETRIES: usize = 40;
/// Same-category blobs dropped inside each organ's own search band.
const TARGETED_DISTRACTORS_PER_ORGAN: usize = 2;
/// Additional blobs per category scattered over the whole body.
const UNIFORM_DISTRACTORS_PER_CATEGORY: usize = 2;
/// Minimum gap between organ shape rectangles.
const ORGAN_GAP: u32 = 40;
/// Distractors keep this distance from every truth box.
const DISTRACTOR_HALO: i64 = 40;

fn distractor_radius_range(category: ColorCategory) -> (f64, f64) {
    match category {
        ColorCategory::Cat1 => (50.0, 80.0),
        ColorCategory::Cat2 => (40.0, 65.0),
        ColorCategory::Cat3 => (18.0, 32.0),
        _ => (50.0, 75.0),
    }
}

fn in_body(x: f64, y: f64, margin: f64) -> bool {
    let dx = (x - BODY_CENTER.0) / BODY_RADII.0;
    let dy = (y - BODY_CENTER.1) / BODY_RADII.1;
    dx * dx + dy * dy <= margin * margin
}

fn rects_gap_at_least(a: Rect, b: Rect, gap: u32) -> bool {
    let ax1 = a.x + a.w + gap;
    let ay1 = a.y + a.h + gap;
    let bx1 = b.x + b.w + gap;
    let by1 = b.y + b.h + gap;
    ax1 <= b.x || bx1 <= a.x || ay1 <= b.y || by1 <= a.y
}

/// Generates one phantom: body silhouette on canvas, distractor blobs,
/// then the present organs with exact masks. A pure function of
/// `(params, registry)`.
pub fn generate_phantom(params: &PhantomParams, registry: &Registry) -> Result<PhantomTruth> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // presence draws first so downstream draws stay aligned per organ
    let present: Vec<bool> = registry
        .iter()
        .map(|spec| {
            let p = params.presence[spec.organ.class_index()];
            p >= 1.0 || rng.gen::<f64>() < p
        })
        .collect();

    // sample organ placements with a pairwise gap between shapes
    let mut placements: Vec<Option<(Rect, Rect)>> = Vec::with_capacity(registry.len());
    for (spec, &is_present) in registry.iter().zip(&present) {
        if !is_present {
            placements.push(None);
            continue;
        }
        let region = &spec.region;
        let sample_axis = |rng: &mut ChaCha8Rng, min: u32, max: u32, limit: u32, dim: u32| {
            let span = (max - min) as f64 * params.placement_jitter;
            let center = (min + max) as f64 / 2.0;
            let lo = (center - span / 2.0).round().max(min as f64) as u32;
            let hi = (center + span / 2.0).round().min(max as f64) as u32;
            let drawn = rng.gen_range(lo..=hi);
            // keep at least 80px (or the whole box) inside the frame
            drawn.min(limit.saturating_sub(dim.min(80))).max(min)
        };
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let a = sample_axis(&mut rng, region.amin, region.amax, CANONICAL_WIDTH, spec.box_w);
            let b = sample_axis(&mut rng, region.bmin, region.bmax, CANONICAL_HEIGHT, spec.box_h);
            let bounding_box = clamp_to_frame(a, b, spec.box_w, spec.box_h);
            let shape = shape_rect(spec.organ, bounding_box);
            let clear = placements
                .iter()
                .flatten()
                .all(|(_, other)| rects_gap_at_least(shape, *other, ORGAN_GAP));
            if clear {
                placed = Some((bounding_box, shape));
                break;
            }
        }
        placements.push(placed);
    }

    // Distractor blobs, kept away from every truth box. Targeted blobs
    // land inside their organ's own search band so pixel position alone
    // cannot screen them out; uniform blobs cover the rest of the body.
    let boxes: Vec<Rect> = placements.iter().flatten().map(|(b, _)| *b).collect();
    let clear_of_boxes = |d: &Distractor| {
        let (x0, y0, x1, y1) = d.bbox();
        boxes.iter().all(|b| {
            x1 + DISTRACTOR_HALO < b.x as i64
                || (b.x + b.w) as i64 + DISTRACTOR_HALO < x0
                || y1 + DISTRACTOR_HALO < b.y as i64
                || (b.y + b.h) as i64 + DISTRACTOR_HALO < y0
        })
    };
    let mut distractors: Vec<Distractor> = Vec::new();
    let mut kind_counter = 0usize;
    for spec in registry.iter() {
        let (rmin, rmax) = distractor_radius_range(spec.category);
        let band_x1 = (spec.region.amax + spec.box_w).min(CANONICAL_WIDTH - 40) as f64;
        let band_y1 = (spec.region.bmax + spec.box_h).min(CANONICAL_HEIGHT - 40) as f64;
        let band_x0 = (spec.region.amin.max(20) as f64).min(band_x1 - 1.0);
        let band_y0 = (spec.region.bmin.max(20) as f64).min(band_y1 - 1.0);
        for _ in 0..TARGETED_DISTRACTORS_PER_ORGAN {
            for _ in 0..DISTRACTOR_RETRIES {
                let candidate = Distractor {
                    category: spec.category,
                    kind: (kind_counter % 3) as u8,
                    cx: rng.gen_range(band_x0..band_x1),
                    cy: rng.gen_range(band_y0..band_y1),
                    radius: rng.gen_range(rmin..rmax),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                };
                if clear_of_boxes(&candidate) {
                    distractors.push(candidate);
                    kind_counter += 1;
                    break;
                }
            }
        }
    }
    for _ in 0..UNIFORM_DISTRACTORS_PER_CATEGORY {
        for category in
            [ColorCategory::Cat1, ColorCategory::Cat2, ColorCategory::Cat3, ColorCategory::Cat4]
        {
            let (rmin, rmax) = distractor_radius_range(category);
            for _ in 0..DISTRACTOR_RETRIES {
                let candidate = Distractor {
                    category,
                    kind: (kind_counter % 3) as u8,
                    cx: rng.gen_range(80.0..(CANONICAL_WIDTH as f64 - 80.0)),
                    cy: rng.gen_range(60.0..(CANONICAL_HEIGHT as f64 - 60.0)),
                    radius: rng.gen_range(rmin..rmax),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                };
                if in_body(candidate.cx, candidate.cy, 0.92) && clear_of_boxes(&candidate) {
                    distractors.push(candidate);
                    kind_counter += 1;
                    break;
                }
            }
        }
    }

    // paint: canvas, body, distractors, organs
    let mut image = RasterImage::filled(CANONICAL_WIDTH, CANONICAL_HEIGHT, CANVAS_COLOR);
    for y in 0..CANONICAL_HEIGHT {
        for x in 0..CANONICAL_WIDTH {
            if in_body(x as f64, y as f64, 1.0) {
                image.set(x, y, BODY_COLOR);
            }
        }
    }
    for d in &distractors {
        let (x0, y0, x1, y1) = d.bbox();
        let color = category_color(d.category);
        for y in y0.max(0)..=y1.min(CANONICAL_HEIGHT as i64 - 1) {
            for x in x0.max(0)..=x1.min(CANONICAL_WIDTH as i64 - 1) {
                if d.contains(x as u32, y as u32) {
                    image.set(x as u32, y as u32, color);
                }
            }
        }
    }

    let mut organs = Vec::with_capacity(registry.len());
    for (spec, placement) in registry.iter().zip(&placements) {
        match placement {
            Some((bounding_box, shape)) => {
                let color = category_color(spec.category);
                let mut mask = BitMask::new_empty(CANONICAL_WIDTH, CANONICAL_HEIGHT);
                for y in shape.y..shape.y + shape.h {
                    for x in shape.x..shape.x + shape.w {
                        if organ_predicate(spec.organ, *shape, x, y) {
                            image.set(x, y, color);
                            mask.set(x, y, true);
                        }
                    }
                }
                organs.push(OrganTruth {
                    organ: spec.organ,
                    present: true,
                    bounding_box: *bounding_box,
                    mask,
                });
            }
            None => organs.push(OrganTruth {
                organ: spec.organ,
                present: false,
                bounding_box: Rect {
                    x: spec.region.amin.min(CANONICAL_WIDTH - 1),
                    y: spec.region.bmin.min(CANONICAL_HEIGHT - 1),
                    w: 1,
                    h: 1,
                },
                mask: BitMask::new_empty(CANONICAL_WIDTH, CANONICAL_HEIGHT),
            }),
        }
    }

    // per-pixel jitter over the finished composition
    if params.noise > 0 {
        let noise = params.noise as i32;
        for y in 0..CANONICAL_HEIGHT {
            for x in 0..CANONICAL_WIDTH {
                let mut px = image.get(x, y);
                for channel in &mut px {
                    let jitter = rng.gen_range(-noise..=noise);
                    *channel = (*channel as i32 + jitter).clamp(0, 255) as u8;
                }
                image.set(x, y, px);
            }
        }
    }

    Ok(PhantomTruth { image, organs })
}

/// Writes `n` phantoms (derived seeds `seed + index`) plus per-organ mask
/// PNGs and a manifest CSV
/// (`image_path,organ,present,mask_path,box_x,box_y,box_w,box_h`, paths
/// relative to `out_dir`). Returns the manifest path.
pub fn generate_dataset(
    n: usize,
    params: &PhantomParams,
    registry: &Registry,
    out_dir: &Path,
) -> Result<PathBuf> {
    if n < 1 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = String::from("image_path,organ,present,mask_path,box_x,box_y,box_w,box_h\n");
    for i in 0..n {
        let item_params = PhantomParams { seed: params.seed + i as u64, ..*params };
        let truth = generate_phantom(&item_params, registry)?;
        let image_name = format!("img_{i:04}.png");
        save_image(&truth.image, &out_dir.join(&image_name))?;
        for organ_truth in &truth.organs {
            let mask_name = format!("mask_{i:04}_{}.png", organ_truth.organ);
            encode_mask(&organ_truth.mask, &out_dir.join(&mask_name))?;
            manifest.push_str(&format!(
                "{image_name},{},{},{mask_name},{},{},{},{}\n",
                organ_truth.organ,
                organ_truth.present as u8,
                organ_truth.bounding_box.x,
                organ_truth.bounding_box.y,
                organ_truth.bounding_box.w,
                organ_truth.bounding_box.h,
            ));
        }
    }
    let manifest_path = out_dir.join("manifest.csv");
    let mut file = std::fs::File::create(&manifest_path)?;
    file.write_all(manifest.as_bytes())?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::builtin_registry;

    #[test]
    fn palette_categories_are_pairwise_separated() {
        let cats =
            [ColorCategory::Cat1, ColorCategory::Cat2, ColorCategory::Cat3, ColorCategory::Cat4];
        for (i, &a) in cats.iter().enumerate() {
            for &b in cats.iter().skip(i + 1) {
                let ca = category_color(a);
                let cb = category_color(b);
                let linf =
                    (0..3).map(|c| (ca[c] as i32 - cb[c] as i32).abs()).max().unwrap();
                assert!(linf >= 100, "{a} vs {b} only {linf} apart");
            }
        }
    }

    #[test]
    fn phantom_is_seed_deterministic() {
        let registry = builtin_registry();
        let params = PhantomParams::with_seed(9);
        let a = generate_phantom(&params, &registry).unwrap();
        let b = generate_phantom(&params, &registry).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(&PhantomParams::with_seed(10), &registry).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn truth_boxes_lie_in_plausible_regions() {
        let registry = builtin_registry();
        for seed in 0..8 {
            let truth =
                generate_phantom(&PhantomParams::with_seed(seed), &registry).unwrap();
            for organ_truth in truth.organs.iter().filter(|t| t.present) {
                let region = registry.get(organ_truth.organ).region;
                let b = organ_truth.bounding_box;
                assert!(
                    b.x >= region.amin && b.x <= region.amax,
                    "{}: x {} outside [{}, {}]",
                    organ_truth.organ,
                    b.x,
                    region.amin,
                    region.amax
                );
                assert!(b.y >= region.bmin && b.y <= region.bmax);
                assert!(b.fits_within(CANONICAL_WIDTH, CANONICAL_HEIGHT));
            }
        }
    }

    #[test]
    fn masks_are_disjoint_and_inside_boxes() {
        let registry = builtin_registry();
        for seed in [3u64, 21, 77] {
            let truth =
                generate_phantom(&PhantomParams::with_seed(seed), &registry).unwrap();
            let present: Vec<&OrganTruth> =
                truth.organs.iter().filter(|t| t.present).collect();
            for t in &present {
                assert!(!t.mask.is_empty(), "{} mask empty", t.organ);
                for y in 0..CANONICAL_HEIGHT {
                    for x in 0..CANONICAL_WIDTH {
                        if t.mask.get(x, y) {
                            assert!(t.bounding_box.contains_point(x, y));
                        }
                    }
                }
            }
            for (i, a) in present.iter().enumerate() {
                for b in present.iter().skip(i + 1) {
                    let overlap = a
                        .mask
                        .bits()
                        .iter()
                        .zip(b.mask.bits())
                        .any(|(&x, &y)| x && y);
                    assert!(!overlap, "{} and {} masks overlap", a.organ, b.organ);
                }
            }
        }
    }

    #[test]
    fn zero_presence_yields_absent_organ() {
        let registry = builtin_registry();
        let mut params = PhantomParams::with_seed(5);
        params.presence[OrganId::Heart.class_index()] = 0.0;
        let truth = generate_phantom(&params, &registry).unwrap();
        let heart = &truth.organs[OrganId::Heart.class_index()];
        assert!(!heart.present);
        assert!(heart.mask.is_empty());
    }

    #[test]
    fn dataset_writes_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let registry = builtin_registry();
        let manifest_path =
            generate_dataset(3, &PhantomParams::with_seed(1), &registry, dir.path()).unwrap();
        let manifest = std::fs::read_to_string(&manifest_path).unwrap();
        let lines: Vec<&str> = manifest.lines().collect();
        assert_eq!(lines.len(), 1 + 3 * 5);
        assert_eq!(lines[0], "image_path,organ,present,mask_path,box_x,box_y,box_w,box_h");
        for i in 0..3 {
            assert!(dir.path().join(format!("img_{i:04}.png")).exists());
            for organ in OrganId::ALL {
                assert!(dir.path().join(format!("mask_{i:04}_{organ}.png")).exists());
            }
        }
    }

    #[test]
    fn dataset_regeneration_is_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let registry = builtin_registry();
        generate_dataset(2, &PhantomParams::with_seed(8), &registry, dir_a.path()).unwrap();
        generate_dataset(2, &PhantomParams::with_seed(8), &registry, dir_b.path()).unwrap();
        for entry in std::fs::read_dir(dir_a.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let a = std::fs::read(dir_a.path().join(&name)).unwrap();
            let b = std::fs::read(dir_b.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name:?} differs between runs");
        }
    }
}
