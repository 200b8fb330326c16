//! Raster primitives: RGB images, rectangles, binary masks, channel
//! statistics, plus decode/encode, canonical resizing, intensity
//! normalization, cropping and augmentation.

use crate::error::{Error, Result};
use image::{GrayImage, ImageFormat, RgbImage};
use rand::Rng;
use std::path::Path;

/// Width of the canonical frame every pipeline stage operates in.
pub const CANONICAL_WIDTH: u32 = 2000;
/// Height of the canonical frame.
pub const CANONICAL_HEIGHT: u32 = 1000;

/// An 8-bit RGB raster, row-major, origin at the top-left corner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width < 1 || height < 1 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(Error::InvalidArgument(format!(
                "pixel buffer length {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// Uniform image of a single color.
    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        Self::new(width, height, vec![color; (width * height) as usize])
            .expect("dimensions checked by caller")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, color: [u8; 3]) {
        self.pixels[y as usize * self.width as usize + x as usize] = color;
    }

    pub fn is_canonical(&self) -> bool {
        self.width == CANONICAL_WIDTH && self.height == CANONICAL_HEIGHT
    }
}

/// Axis-aligned rectangle in pixel coordinates; `x`/`y` name the left/top edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w < 1 || h < 1 {
            return Err(Error::InvalidArgument(format!(
                "rect extent must be at least 1x1, got {w}x{h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    /// True iff the rect lies fully inside a raster of the given size.
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

/// Row-major boolean raster annotating an image or a crop of one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new_empty(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; (width as usize) * (height as usize)] }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != (width as usize) * (height as usize) {
            return Err(Error::InvalidArgument(format!(
                "bit buffer length {} does not match {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| !b)
    }

    pub fn same_dims(&self, other: &BitMask) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Per-channel mean and standard deviation on the 0-255 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        if std.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "channel std must be finite and non-negative, got {std:?}"
            )));
        }
        Ok(Self { mean, std })
    }

    /// Population statistics over every pixel of `img`.
    pub fn of(img: &RasterImage) -> Self {
        let n = img.pixels.len() as f64;
        let mut sum = [0.0f64; 3];
        let mut sumsq = [0.0f64; 3];
        for px in &img.pixels {
            for c in 0..3 {
                let v = px[c] as f64;
                sum[c] += v;
                sumsq[c] += v * v;
            }
        }
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for c in 0..3 {
            mean[c] = sum[c] / n;
            std[c] = (sumsq[c] / n - mean[c] * mean[c]).max(0.0).sqrt();
        }
        Self { mean, std }
    }
}

pub fn load_image(path: &Path) -> Result<RasterImage> {
    let bytes = std::fs::read(path)?;
    let dynamic =
        image::load_from_memory(&bytes).map_err(|e| Error::Format(e.to_string()))?;
    let rgb = dynamic.to_rgb8();
    let (width, height) = rgb.dimensions();
    let pixels = rgb.pixels().map(|p| p.0).collect();
    RasterImage::new(width, height, pixels)
}

/// Writes `img` as a PNG regardless of the path's extension.
pub fn save_image(img: &RasterImage, path: &Path) -> Result<()> {
    let mut buf = RgbImage::new(img.width, img.height);
    for (i, px) in buf.pixels_mut().enumerate() {
        px.0 = img.pixels[i];
    }
    buf.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Bilinear resize to the 2000x1000 canonical frame.
pub fn resize_canonical(img: &RasterImage) -> RasterImage {
    resize(img, CANONICAL_WIDTH, CANONICAL_HEIGHT)
}

/// Bilinear resize to an arbitrary size.
pub fn resize(img: &RasterImage, width: u32, height: u32) -> RasterImage {
    assert!(width >= 1 && height >= 1);
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let mut pixels = Vec::with_capacity((width as usize) * (height as usize));
    for y in 0..height {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..width {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            let rgb = sample_bilinear(img, fx, fy);
            pixels.push([
                rgb[0].round().clamp(0.0, 255.0) as u8,
                rgb[1].round().clamp(0.0, 255.0) as u8,
                rgb[2].round().clamp(0.0, 255.0) as u8,
            ]);
        }
    }
    RasterImage { width, height, pixels }
}

/// Bilinear sample with clamp-to-edge addressing.
fn sample_bilinear(img: &RasterImage, fx: f64, fy: f64) -> [f64; 3] {
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    let fx = fx.clamp(0.0, max_x);
    let fy = fy.clamp(0.0, max_y);
    let x0 = fx.floor() as u32;
    let y0 = fy.floor() as u32;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    let p00 = img.get(x0, y0);
    let p10 = img.get(x1, y0);
    let p01 = img.get(x0, y1);
    let p11 = img.get(x1, y1);
    let mut out = [0.0f64; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - tx) + p10[c] as f64 * tx;
        let bottom = p01[c] as f64 * (1.0 - tx) + p11[c] as f64 * tx;
        out[c] = top * (1.0 - ty) + bottom * ty;
    }
    out
}

/// Affine-matches each channel's mean/std to `reference`. A zero-variance
/// input channel is shifted to the reference mean without rescaling.
pub fn normalize_intensity(img: &RasterImage, reference: &ChannelStats) -> RasterImage {
    let stats = ChannelStats::of(img);
    let mut scale = [1.0f64; 3];
    for c in 0..3 {
        if stats.std[c] > 0.0 {
            scale[c] = reference.std[c] / stats.std[c];
        }
    }
    let pixels = img
        .pixels
        .iter()
        .map(|px| {
            let mut out = [0u8; 3];
            for c in 0..3 {
                let v = (px[c] as f64 - stats.mean[c]) * scale[c] + reference.mean[c];
                out[c] = v.round().clamp(0.0, 255.0) as u8;
            }
            out
        })
        .collect();
    RasterImage { width: img.width, height: img.height, pixels }
}

pub fn crop(img: &RasterImage, rect: Rect) -> Result<RasterImage> {
    if !rect.fits_within(img.width, img.height) {
        return Err(Error::Bounds(format!(
            "rect {rect:?} exceeds image bounds {}x{}",
            img.width, img.height
        )));
    }
    let mut pixels = Vec::with_capacity((rect.w as usize) * (rect.h as usize));
    for y in 0..rect.h {
        let row = (rect.y + y) as usize * img.width as usize + rect.x as usize;
        pixels.extend_from_slice(&img.pixels[row..row + rect.w as usize]);
    }
    Ok(RasterImage { width: rect.w, height: rect.h, pixels })
}

/// Maximum augmentation magnitudes. Transforms sample uniformly within
/// `[-magnitude, +magnitude]`; horizontal flips are deliberately absent
/// because the anatomical priors are laterally asymmetric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub max_translate_px: f64,
    pub max_scale: f64,
    pub max_rotate_deg: f64,
    pub max_brightness: f64,
}

impl AugmentParams {
    pub const MAX_TRANSLATE_PX: f64 = 20.0;
    pub const MAX_SCALE: f64 = 0.05;
    pub const MAX_ROTATE_DEG: f64 = 3.0;
    pub const MAX_BRIGHTNESS: f64 = 0.10;

    pub fn new(
        max_translate_px: f64,
        max_scale: f64,
        max_rotate_deg: f64,
        max_brightness: f64,
    ) -> Result<Self> {
        let ok = (0.0..=Self::MAX_TRANSLATE_PX).contains(&max_translate_px)
            && (0.0..=Self::MAX_SCALE).contains(&max_scale)
            && (0.0..=Self::MAX_ROTATE_DEG).contains(&max_rotate_deg)
            && (0.0..=Self::MAX_BRIGHTNESS).contains(&max_brightness);
        if !ok {
            return Err(Error::InvalidArgument(
                "augmentation magnitudes outside documented ranges".into(),
            ));
        }
        Ok(Self { max_translate_px, max_scale, max_rotate_deg, max_brightness })
    }

    pub fn zero() -> Self {
        Self { max_translate_px: 0.0, max_scale: 0.0, max_rotate_deg: 0.0, max_brightness: 0.0 }
    }

    pub fn default_ranges() -> Self {
        Self {
            max_translate_px: Self::MAX_TRANSLATE_PX,
            max_scale: Self::MAX_SCALE,
            max_rotate_deg: Self::MAX_ROTATE_DEG,
            max_brightness: Self::MAX_BRIGHTNESS,
        }
    }
}

fn sample_magnitude(rng: &mut impl Rng, max: f64) -> f64 {
    if max == 0.0 {
        0.0
    } else {
        rng.gen_range(-max..=max)
    }
}

/// Randomized augmentation: translation, isotropic scale, rotation and
/// brightness, applied in that order. Zero magnitudes reproduce the input
/// pixel for pixel; a fixed rng state yields an identical output.
pub fn augment_image(img: &RasterImage, params: &AugmentParams, rng: &mut impl Rng) -> RasterImage {
    let dx = sample_magnitude(rng, params.max_translate_px);
    let dy = sample_magnitude(rng, params.max_translate_px);
    let scale = 1.0 + sample_magnitude(rng, params.max_scale);
    let rotate_deg = sample_magnitude(rng, params.max_rotate_deg);
    let brightness = sample_magnitude(rng, params.max_brightness);
    warp_affine(img, dx, dy, scale, rotate_deg, brightness)
}

/// Deterministic core of `augment_image` with explicit magnitudes.
pub fn warp_affine(
    img: &RasterImage,
    dx: f64,
    dy: f64,
    scale: f64,
    rotate_deg: f64,
    brightness: f64,
) -> RasterImage {
    let gain = 1.0 + brightness;
    if dx == 0.0 && dy == 0.0 && scale == 1.0 && rotate_deg == 0.0 {
        if brightness == 0.0 {
            return img.clone();
        }
        let pixels = img
            .pixels
            .iter()
            .map(|px| px.map(|v| (v as f64 * gain).round().clamp(0.0, 255.0) as u8))
            .collect();
        return RasterImage { width: img.width, height: img.height, pixels };
    }
    let theta = rotate_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height {
        for x in 0..img.width {
            // Invert rotate(scale(translate(p))) about the image center;
            // out-of-frame samples clamp to the nearest edge pixel.
            let rx = x as f64 - cx;
            let ry = y as f64 - cy;
            let ux = (cos_t * rx + sin_t * ry) / scale;
            let uy = (-sin_t * rx + cos_t * ry) / scale;
            let sxf = ux + cx - dx;
            let syf = uy + cy - dy;
            let rgb = sample_bilinear(img, sxf, syf);
            pixels.push([
                (rgb[0] * gain).round().clamp(0.0, 255.0) as u8,
                (rgb[1] * gain).round().clamp(0.0, 255.0) as u8,
                (rgb[2] * gain).round().clamp(0.0, 255.0) as u8,
            ]);
        }
    }
    RasterImage { width: img.width, height: img.height, pixels }
}

/// Writes a mask as an 8-bit grayscale PNG: 0 = background, 255 = organ.
pub fn encode_mask(mask: &BitMask, path: &Path) -> Result<()> {
    let mut buf = GrayImage::new(mask.width, mask.height);
    for (i, px) in buf.pixels_mut().enumerate() {
        px.0 = [if mask.bits[i] { 255 } else { 0 }];
    }
    buf.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Reads a mask PNG; any gray value other than 0 or 255 is rejected.
pub fn decode_mask(path: &Path) -> Result<BitMask> {
    let bytes = std::fs::read(path)?;
    let gray = image::load_from_memory(&bytes)
        .map_err(|e| Error::Format(e.to_string()))?
        .to_luma8();
    let (width, height) = gray.dimensions();
    let mut bits = Vec::with_capacity((width as usize) * (height as usize));
    for px in gray.pixels() {
        match px.0[0] {
            0 => bits.push(false),
            255 => bits.push(true),
            other => {
                return Err(Error::Format(format!(
                    "mask PNG contains gray value {other}, expected 0 or 255"
                )))
            }
        }
    }
    BitMask::from_bits(width, height, bits)
}
