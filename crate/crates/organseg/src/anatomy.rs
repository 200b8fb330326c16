//! Anatomical priors: per-organ bounding-box sizes, plausible regions for
//! the box's top-left corner, the builtin registry, and the candidate-box
//! iterator that drives the sliding-window search.

use crate::chroma::ColorCategory;
use crate::error::{Error, Result};
use crate::raster::{Rect, CANONICAL_HEIGHT, CANONICAL_WIDTH};
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

/// The five organs the pipeline recognizes. The order doubles as the
/// class-index order of the shape classifier (index 5 is "none").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OrganId {
    Brain,
    Heart,
    Liver,
    Kidney,
    Spine,
}

impl OrganId {
    pub const ALL: [OrganId; 5] =
        [OrganId::Brain, OrganId::Heart, OrganId::Liver, OrganId::Kidney, OrganId::Spine];

    pub fn name(&self) -> &'static str {
        match self {
            OrganId::Brain => "Brain",
            OrganId::Heart => "Heart",
            OrganId::Liver => "Liver",
            OrganId::Kidney => "Kidney",
            OrganId::Spine => "Spine",
        }
    }

    /// Class index in the shape classifier's output order.
    pub fn class_index(&self) -> usize {
        match self {
            OrganId::Brain => 0,
            OrganId::Heart => 1,
            OrganId::Liver => 2,
            OrganId::Kidney => 3,
            OrganId::Spine => 4,
        }
    }
}

impl fmt::Display for OrganId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrganId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "brain" => Ok(OrganId::Brain),
            "heart" => Ok(OrganId::Heart),
            "liver" => Ok(OrganId::Liver),
            "kidney" => Ok(OrganId::Kidney),
            "spine" => Ok(OrganId::Spine),
            other => Err(Error::InvalidArgument(format!("unknown organ '{other}'"))),
        }
    }
}

/// Admissible range for a bounding box's top-left corner, expressed in the
/// canonical frame: `a` runs along the width axis, `b` along the height axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlausibleRegion {
    pub amin: u32,
    pub bmin: u32,
    pub amax: u32,
    pub bmax: u32,
}

impl PlausibleRegion {
    pub fn new(amin: u32, bmin: u32, amax: u32, bmax: u32) -> Result<Self> {
        if amin > amax || bmin > bmax {
            return Err(Error::InvalidArgument(format!(
                "degenerate region ({amin},{bmin})-({amax},{bmax})"
            )));
        }
        if amax > CANONICAL_WIDTH || bmax > CANONICAL_HEIGHT {
            return Err(Error::InvalidArgument(format!(
                "region ({amin},{bmin})-({amax},{bmax}) exceeds the canonical frame"
            )));
        }
        Ok(Self { amin, bmin, amax, bmax })
    }
}

/// One organ's prior: fixed box size, corner region, and color category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrganSpec {
    pub organ: OrganId,
    pub box_w: u32,
    pub box_h: u32,
    pub region: PlausibleRegion,
    pub category: ColorCategory,
}

impl OrganSpec {
    pub fn new(
        organ: OrganId,
        box_w: u32,
        box_h: u32,
        region: PlausibleRegion,
        category: ColorCategory,
    ) -> Result<Self> {
        if box_w < 1 || box_h < 1 {
            return Err(Error::InvalidArgument(format!("box size {box_w}x{box_h} for {organ}")));
        }
        Ok(Self { organ, box_w, box_h, region, category })
    }
}

/// Ordered collection holding exactly one spec per organ.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    specs: Vec<OrganSpec>,
}

impl Registry {
    pub fn new(specs: Vec<OrganSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for spec in &specs {
            if !seen.insert(spec.organ) {
                return Err(Error::Validation(format!("duplicate organ {}", spec.organ)));
            }
        }
        for organ in OrganId::ALL {
            if !seen.contains(&organ) {
                return Err(Error::Validation(format!("missing organ {organ}")));
            }
        }
        Ok(Self { specs })
    }

    pub fn get(&self, organ: OrganId) -> &OrganSpec {
        self.specs
            .iter()
            .find(|s| s.organ == organ)
            .expect("registry invariant: one spec per organ")
    }

    pub fn iter(&self) -> impl Iterator<Item = &OrganSpec> {
        self.specs.iter()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

impl fmt::Display for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for spec in &self.specs {
            writeln!(
                f,
                "organ={} box={}x{} region={},{}:{},{} category={}",
                spec.organ,
                spec.box_w,
                spec.box_h,
                spec.region.amin,
                spec.region.bmin,
                spec.region.amax,
                spec.region.bmax,
                spec.category,
            )?;
        }
        Ok(())
    }
}

/// The published organ priors.
pub fn builtin_registry() -> Registry {
    let rows = [
        (OrganId::Brain, 400, 400, (0, 400, 120, 630), ColorCategory::Cat1),
        (OrganId::Heart, 100, 100, (800, 430, 990, 1000), ColorCategory::Cat3),
        (OrganId::Liver, 300, 800, (1010, 400, 1400, 710), ColorCategory::Cat4),
        (OrganId::Kidney, 400, 400, (1200, 190, 1500, 500), ColorCategory::Cat4),
        (OrganId::Spine, 600, 200, (100, 50, 400, 400), ColorCategory::Cat2),
    ];
    let specs = rows
        .into_iter()
        .map(|(organ, w, h, (amin, bmin, amax, bmax), category)| {
            let region = PlausibleRegion::new(amin, bmin, amax, bmax)
                .expect("builtin regions are within the frame");
            OrganSpec::new(organ, w, h, region, category).expect("builtin boxes are non-empty")
        })
        .collect();
    Registry::new(specs).expect("builtin registry covers all organs exactly once")
}

/// Parses the registry file format: one `organ= box= region= category=`
/// record per line, `#` comments, blank lines ignored.
pub fn parse_registry(text: &str) -> Result<Registry> {
    let mut specs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        specs.push(parse_registry_line(line, line_no)?);
    }
    Registry::new(specs)
}

fn parse_registry_line(line: &str, line_no: usize) -> Result<OrganSpec> {
    let err = |message: String| Error::Parse { line: line_no, message };
    let mut organ = None;
    let mut boxdim = None;
    let mut region = None;
    let mut category = None;
    for token in line.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got '{token}'")))?;
        match key {
            "organ" => organ = Some(OrganId::from_str(value).map_err(|e| err(e.to_string()))?),
            "box" => {
                let (w, h) = value
                    .split_once('x')
                    .ok_or_else(|| err(format!("expected WxH, got '{value}'")))?;
                let w: u32 = w.parse().map_err(|_| err(format!("bad box width '{w}'")))?;
                let h: u32 = h.parse().map_err(|_| err(format!("bad box height '{h}'")))?;
                boxdim = Some((w, h));
            }
            "region" => {
                let (lo, hi) = value
                    .split_once(':')
                    .ok_or_else(|| err(format!("expected amin,bmin:amax,bmax, got '{value}'")))?;
                let parse_pair = |s: &str| -> Result<(u32, u32)> {
                    let (a, b) =
                        s.split_once(',').ok_or_else(|| err(format!("bad corner '{s}'")))?;
                    let a = a.trim().parse().map_err(|_| err(format!("bad coordinate '{a}'")))?;
                    let b = b.trim().parse().map_err(|_| err(format!("bad coordinate '{b}'")))?;
                    Ok((a, b))
                };
                let (amin, bmin) = parse_pair(lo)?;
                let (amax, bmax) = parse_pair(hi)?;
                region = Some(
                    PlausibleRegion::new(amin, bmin, amax, bmax).map_err(|e| err(e.to_string()))?,
                );
            }
            "category" => {
                category = Some(ColorCategory::from_str(value).map_err(|e| err(e.to_string()))?)
            }
            other => return Err(err(format!("unknown key '{other}'"))),
        }
    }
    let organ = organ.ok_or_else(|| err("missing organ=".into()))?;
    let (box_w, box_h) = boxdim.ok_or_else(|| err("missing box=".into()))?;
    let region = region.ok_or_else(|| err("missing region=".into()))?;
    let category = category.ok_or_else(|| err("missing category=".into()))?;
    OrganSpec::new(organ, box_w, box_h, region, category).map_err(|e| err(e.to_string()))
}

/// Derives a plausible region from annotated top-left corners: per axis,
/// mean +- 3 sample standard deviations, the lower bound rounded down and
/// the upper bound rounded up to multiples of 10, clamped to the frame.
pub fn plausible_region_from_stats(corners: &[(f64, f64)]) -> Result<PlausibleRegion> {
    if corners.is_empty() {
        return Err(Error::InvalidArgument("no annotated corners provided".into()));
    }
    let axis = |values: &mut dyn Iterator<Item = f64>, limit: f64| -> (u32, u32) {
        let values: Vec<f64> = values.collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let lo = ((mean - 3.0 * std) / 10.0).floor() * 10.0;
        let hi = ((mean + 3.0 * std) / 10.0).ceil() * 10.0;
        (lo.clamp(0.0, limit) as u32, hi.clamp(0.0, limit) as u32)
    };
    let (amin, amax) = axis(&mut corners.iter().map(|c| c.0), CANONICAL_WIDTH as f64);
    let (bmin, bmax) = axis(&mut corners.iter().map(|c| c.1), CANONICAL_HEIGHT as f64);
    PlausibleRegion::new(amin, bmin, amax, bmax)
}

/// Grid positions `{min, min+stride, ...}` plus `max` when it is off-grid.
fn axis_positions(min: u32, max: u32, stride: u32) -> Vec<u32> {
    let mut positions: Vec<u32> = (min..=max).step_by(stride as usize).collect();
    if *positions.last().expect("range is non-empty") != max {
        positions.push(max);
    }
    positions
}

/// Clamps a box placement into the canonical frame by intersecting it with
/// the frame; origins at or past the far edge pull back to the last pixel.
pub fn clamp_to_frame(a: u32, b: u32, box_w: u32, box_h: u32) -> Rect {
    let x = a.min(CANONICAL_WIDTH - 1);
    let y = b.min(CANONICAL_HEIGHT - 1);
    Rect { x, y, w: box_w.min(CANONICAL_WIDTH - x), h: box_h.min(CANONICAL_HEIGHT - y) }
}

/// Enumerates candidate bounding boxes over a plausible region in scan
/// order: left-to-right inner, top-to-bottom outer. Every emitted rect is
/// clamped to the canonical frame; duplicates after clamping are dropped.
pub fn candidate_boxes(
    region: &PlausibleRegion,
    box_w: u32,
    box_h: u32,
    stride: u32,
) -> Result<Vec<Rect>> {
    if stride < 1 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let cols = axis_positions(region.amin, region.amax, stride);
    let rows = axis_positions(region.bmin, region.bmax, stride);
    let mut seen = HashSet::with_capacity(cols.len() * rows.len());
    let mut boxes = Vec::with_capacity(cols.len() * rows.len());
    for &b in &rows {
        for &a in &cols {
            let rect = clamp_to_frame(a, b, box_w, box_h);
            if seen.insert(rect) {
                boxes.push(rect);
            }
        }
    }
    Ok(boxes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_registry_matches_published_priors() {
        let reg = builtin_registry();
        assert_eq!(reg.len(), 5);
        let brain = reg.get(OrganId::Brain);
        assert_eq!((brain.box_w, brain.box_h), (400, 400));
        assert_eq!(brain.region, PlausibleRegion::new(0, 400, 120, 630).unwrap());
        assert_eq!(brain.category, ColorCategory::Cat1);
        let liver = reg.get(OrganId::Liver);
        assert_eq!((liver.box_w, liver.box_h), (300, 800));
        assert_eq!(liver.region, PlausibleRegion::new(1010, 400, 1400, 710).unwrap());
        assert_eq!(liver.category, ColorCategory::Cat4);
    }

    #[test]
    fn registry_round_trips_through_text() {
        let reg = builtin_registry();
        let text = reg.to_string();
        assert_eq!(parse_registry(&text).unwrap(), reg);
    }

    #[test]
    fn duplicate_organ_is_validation_error() {
        let mut text = builtin_registry().to_string();
        text.push_str("organ=Brain box=10x10 region=0,0:10,10 category=CAT1\n");
        let err = parse_registry(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "got {err:?}");
    }

    #[test]
    fn missing_organ_is_validation_error() {
        let text = builtin_registry()
            .to_string()
            .lines()
            .filter(|l| !l.contains("Spine"))
            .collect::<Vec<_>>()
            .join("\n");
        let err = parse_registry(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "got {err:?}");
    }

    #[test]
    fn negative_box_width_is_parse_error() {
        let err =
            parse_registry("organ=Brain box=-4x10 region=0,0:10,10 category=CAT1").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("got {other:?}"),
        }
    }

    #[test]
    fn comments_and_whitespace_are_tolerated() {
        let text = format!("# header\n\n  {}", builtin_registry());
        assert_eq!(parse_registry(&text).unwrap(), builtin_registry());
    }

    #[test]
    fn stats_zero_variance_corners() {
        let region =
            plausible_region_from_stats(&[(50.0, 60.0); 4]).unwrap();
        assert_eq!(region, PlausibleRegion::new(50, 60, 50, 60).unwrap());
    }

    #[test]
    fn stats_two_corner_example() {
        // a-axis: mean 10, s = 14.142..., 3s = 42.43 -> raw [-32.43, 52.43]
        let region = plausible_region_from_stats(&[(0.0, 0.0), (20.0, 0.0)]).unwrap();
        assert_eq!(region, PlausibleRegion::new(0, 0, 60, 0).unwrap());
    }

    #[test]
    fn stats_single_corner() {
        let region = plausible_region_from_stats(&[(100.0, 200.0)]).unwrap();
        assert_eq!(region, PlausibleRegion::new(100, 200, 100, 200).unwrap());
    }

    #[test]
    fn stats_empty_is_argument_error() {
        assert!(matches!(
            plausible_region_from_stats(&[]).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn candidates_degenerate_region_single_box() {
        let region = PlausibleRegion::new(0, 0, 0, 0).unwrap();
        let boxes = candidate_boxes(&region, 10, 10, 7).unwrap();
        assert_eq!(boxes, vec![Rect::new(0, 0, 10, 10).unwrap()]);
    }

    #[test]
    fn candidates_liver_stride_10_count() {
        let reg = builtin_registry();
        let liver = reg.get(OrganId::Liver);
        let boxes = candidate_boxes(&liver.region, liver.box_w, liver.box_h, 10).unwrap();
        assert_eq!(boxes.len(), 1280);
    }

    #[test]
    fn candidates_trailing_edge_included() {
        let region = PlausibleRegion::new(0, 0, 400, 0).unwrap();
        let boxes = candidate_boxes(&region, 10, 10, 1000).unwrap();
        let xs: Vec<u32> = boxes.iter().map(|r| r.x).collect();
        assert_eq!(xs, vec![0, 400]);
    }

    #[test]
    fn candidates_scan_order_is_row_major() {
        let region = PlausibleRegion::new(0, 0, 20, 10).unwrap();
        let boxes = candidate_boxes(&region, 5, 5, 10).unwrap();
        let coords: Vec<(u32, u32)> = boxes.iter().map(|r| (r.x, r.y)).collect();
        assert_eq!(coords, vec![(0, 0), (10, 0), (20, 0), (0, 10), (10, 10), (20, 10)]);
    }

    #[test]
    fn candidates_zero_stride_is_argument_error() {
        let region = PlausibleRegion::new(0, 0, 10, 10).unwrap();
        assert!(matches!(
            candidate_boxes(&region, 5, 5, 0).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn candidates_fit_frame_and_mean_corner_in_region() {
        let reg = builtin_registry();
        for spec in reg.iter() {
            let boxes = candidate_boxes(&spec.region, spec.box_w, spec.box_h, 10).unwrap();
            assert!(!boxes.is_empty());
            for b in &boxes {
                assert!(b.fits_within(CANONICAL_WIDTH, CANONICAL_HEIGHT), "{b:?}");
            }
        }
    }

    #[test]
    fn stats_translation_equivariance_inside_frame() {
        let corners = [(100.0, 200.0), (140.0, 260.0), (120.0, 230.0)];
        let shifted: Vec<(f64, f64)> = corners.iter().map(|c| (c.0 + 100.0, c.1 + 50.0)).collect();
        let base = plausible_region_from_stats(&corners).unwrap();
        let moved = plausible_region_from_stats(&shifted).unwrap();
        assert_eq!(moved.amin, base.amin + 100);
        assert_eq!(moved.amax, base.amax + 100);
        assert_eq!(moved.bmin, base.bmin + 50);
        assert_eq!(moved.bmax, base.bmax + 50);
    }

    #[test]
    fn stats_mean_corner_lies_inside_region() {
        let corners = [(10.0, 20.0), (400.0, 90.0), (230.0, 55.0)];
        let region = plausible_region_from_stats(&corners).unwrap();
        let mean_a = corners.iter().map(|c| c.0).sum::<f64>() / 3.0;
        let mean_b = corners.iter().map(|c| c.1).sum::<f64>() / 3.0;
        assert!(region.amin as f64 <= mean_a && mean_a <= region.amax as f64);
        assert!(region.bmin as f64 <= mean_b && mean_b <= region.bmax as f64);
    }
}
