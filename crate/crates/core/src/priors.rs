//! Reasoning priors over candidate boxes.
//!
//! The spatial prior evaluates an analytic directional likelihood field at a
//! box center; the visual prior averages an externally supplied relevance
//! grid inside the box. Both land in [0, 1] and aggregate by arithmetic mean
//! into the combined prior used for ranking, fusion, and matching.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::BoxN;
use crate::phrase::{Direction, SpatialTerm, SpatialVocab};
use crate::sample::Sample;

/// Falloff profile of the directional fields.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decay {
    /// Straight-line falloff: the "left" field is exactly `1 - cx`.
    #[default]
    Linear,
    /// Gaussian falloff from the relevant edge (or the image center), with
    /// `sigma` in normalized image units.
    Gaussian { sigma: f64 },
}

impl Decay {
    pub const DEFAULT_SIGMA: f64 = 0.35;
}

/// Distance from the image center to a corner, the normalizer for the
/// radially linear center field.
const CENTER_MAX_DIST: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Analytic directional likelihood field over the unit square. Empty term
/// sets give the neutral constant 0.5; multiple terms average pointwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPriorField {
    terms: Vec<SpatialTerm>,
    decay: Decay,
}

impl SpatialPriorField {
    pub fn new(terms: Vec<SpatialTerm>, decay: Decay) -> Self {
        Self { terms, decay }
    }

    pub fn terms(&self) -> &[SpatialTerm] {
        &self.terms
    }

    /// Field value at a normalized point, always in [0, 1].
    pub fn value_at(&self, cx: f64, cy: f64) -> f64 {
        if self.terms.is_empty() {
            return 0.5;
        }
        let sum: f64 = self.terms.iter().map(|t| self.term_value(t, cx, cy)).sum();
        (sum / self.terms.len() as f64).clamp(0.0, 1.0)
    }

    fn term_value(&self, term: &SpatialTerm, cx: f64, cy: f64) -> f64 {
        let dirs = term.directions();
        let sum: f64 = dirs.iter().map(|d| base_value(*d, self.decay, cx, cy)).sum();
        sum / dirs.len() as f64
    }

    /// Sample the field on a `width x height` grid at pixel centers,
    /// row-major. Intended for visualization exports.
    pub fn rasterize(&self, width: usize, height: usize) -> RasterField {
        let mut values = Vec::with_capacity(width * height);
        for iy in 0..height {
            let cy = (iy as f64 + 0.5) / height as f64;
            for ix in 0..width {
                let cx = (ix as f64 + 0.5) / width as f64;
                values.push(self.value_at(cx, cy));
            }
        }
        RasterField { width, height, values }
    }
}

fn base_value(dir: Direction, decay: Decay, cx: f64, cy: f64) -> f64 {
    // Distance toward the edge (or center) the direction names.
    let dist = match dir {
        Direction::Left => cx,
        Direction::Right => 1.0 - cx,
        Direction::Top => cy,
        Direction::Bottom => 1.0 - cy,
        Direction::Center => {
            let (dx, dy) = (cx - 0.5, cy - 0.5);
            (dx * dx + dy * dy).sqrt()
        }
    };
    match decay {
        Decay::Linear => match dir {
            Direction::Center => (1.0 - dist / CENTER_MAX_DIST).clamp(0.0, 1.0),
            _ => (1.0 - dist).clamp(0.0, 1.0),
        },
        Decay::Gaussian { sigma } => (-dist * dist / (2.0 * sigma * sigma)).exp(),
    }
}

/// Rasterized field export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl RasterField {
    /// Rows of space-separated values with 6 decimal places.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Dense text-conditioned relevance map over the image plane, row-major,
/// values in [0, 1] after ingestion clamping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorError {
    /// Grid dimensions and value count disagree, or a dimension is zero.
    BadGrid { width: usize, height: usize, len: usize },
    /// Box lies outside the grid after mapping.
    DegenerateBox,
    /// Per-candidate arrays of different lengths.
    LengthMismatch { left: usize, right: usize },
}

impl fmt::Display for PriorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadGrid { width, height, len } => {
                write!(f, "grid {width}x{height} cannot hold {len} values")
            }
            Self::DegenerateBox => f.write_str("box maps outside the relevance grid"),
            Self::LengthMismatch { left, right } => {
                write!(f, "per-candidate arrays of length {left} and {right}")
            }
        }
    }
}

impl std::error::Error for PriorError {}

impl RelevanceGrid {
    /// Build a grid, clamping values into [0, 1]. Returns the grid and the
    /// number of values that needed clamping (non-finite values clamp to 0).
    pub fn from_values(
        width: usize,
        height: usize,
        mut values: Vec<f64>,
    ) -> Result<(Self, usize), PriorError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(PriorError::BadGrid { width, height, len: values.len() });
        }
        let mut clamped = 0;
        for v in &mut values {
            if !v.is_finite() {
                *v = 0.0;
                clamped += 1;
            } else if *v < 0.0 || *v > 1.0 {
                *v = v.clamp(0.0, 1.0);
                clamped += 1;
            }
        }
        Ok((Self { width, height, values }, clamped))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, values: vec![value.clamp(0.0, 1.0); width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.width + ix]
    }

    fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            (ix as f64 + 0.5) / self.width as f64,
            (iy as f64 + 0.5) / self.height as f64,
        )
    }
}

/// Spatial prior of a box: the field evaluated at the box center.
pub fn spatial_prior(field: &SpatialPriorField, b: &BoxN) -> f64 {
    let (cx, cy) = b.center();
    field.value_at(cx, cy)
}

/// Visual prior of a box: the mean of grid cells whose centers fall inside
/// the box. When no cell center is covered, the cell nearest the box center
/// stands in.
pub fn visual_prior(grid: &RelevanceGrid, b: &BoxN) -> Result<f64, PriorError> {
    if b.x1 > 1.0 || b.x2 < 0.0 || b.y1 > 1.0 || b.y2 < 0.0 {
        return Err(PriorError::DegenerateBox);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    // Cell centers inside the box span a contiguous index range per axis.
    let lo_x = ((b.x1 * grid.width as f64 - 0.5).ceil().max(0.0)) as usize;
    let hi_x = ((b.x2 * grid.width as f64 - 0.5).floor()).min(grid.width as f64 - 1.0);
    let lo_y = ((b.y1 * grid.height as f64 - 0.5).ceil().max(0.0)) as usize;
    let hi_y = ((b.y2 * grid.height as f64 - 0.5).floor()).min(grid.height as f64 - 1.0);
    if hi_x >= 0.0 && hi_y >= 0.0 {
        for iy in lo_y..=(hi_y as usize) {
            for ix in lo_x..=(hi_x as usize) {
                let (px, py) = grid.cell_center(ix, iy);
                if px >= b.x1 && px <= b.x2 && py >= b.y1 && py <= b.y2 {
                    sum += grid.at(ix, iy);
                    count += 1;
                }
            }
        }
    }
    if count > 0 {
        return Ok(sum / count as f64);
    }
    // Nearest cell to the box center; ties go to the lower index.
    let (cx, cy) = b.center();
    let mut best = (f64::INFINITY, 0usize, 0usize);
    for iy in 0..grid.height {
        for ix in 0..grid.width {
            let (px, py) = grid.cell_center(ix, iy);
            let d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
            if d2 < best.0 {
                best = (d2, ix, iy);
            }
        }
    }
    Ok(grid.at(best.1, best.2))
}

/// Mean of the two prior channels, clamped to [0, 1].
pub fn aggregate(h_s: &[f64], h_v: &[f64]) -> Result<Vec<f64>, PriorError> {
    if h_s.len() != h_v.len() {
        return Err(PriorError::LengthMismatch { left: h_s.len(), right: h_v.len() });
    }
    Ok(h_s
        .iter()
        .zip(h_v)
        .map(|(s, v)| ((s + v) / 2.0).clamp(0.0, 1.0))
        .collect())
}

/// Per-candidate prior scores alongside the detector scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBundle {
    pub h_s: Vec<f64>,
    pub h_v: Vec<f64>,
    pub h: Vec<f64>,
    pub p: Vec<f64>,
}

impl PriorBundle {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Compute the bundle for one sample: spatial prior from the phrase,
    /// visual prior from the grid (neutral 0.5 when absent), detector scores
    /// from the candidates.
    pub fn compute(
        sample: &Sample,
        grid: Option<&RelevanceGrid>,
        vocab: &SpatialVocab,
        decay: Decay,
    ) -> Result<Self, PriorError> {
        let terms = match crate::phrase::tokenize(&sample.phrase) {
            Ok(p) => crate::phrase::extract_spatial_terms_with(&p, vocab),
            Err(_) => Vec::new(),
        };
        let field = SpatialPriorField::new(terms, decay);
        let mut h_s = Vec::with_capacity(sample.candidates.len());
        let mut h_v = Vec::with_capacity(sample.candidates.len());
        let mut p = Vec::with_capacity(sample.candidates.len());
        for cand in &sample.candidates {
            h_s.push(spatial_prior(&field, &cand.bbox));
            h_v.push(match grid {
                Some(g) => visual_prior(g, &cand.bbox)?,
                None => 0.5,
            });
            p.push(cand.score);
        }
        let h = aggregate(&h_s, &h_v)?;
        Ok(Self { h_s, h_v, h, p })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phrase::parse_terms;
    use crate::rng::SplitMix64;
    use crate::sample::Candidate;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoxN {
        BoxN::new(x1, y1, x2, y2).unwrap()
    }

    fn field(text: &str, decay: Decay) -> SpatialPriorField {
        SpatialPriorField::new(parse_terms(text).unwrap(), decay)
    }

    #[test]
    fn empty_terms_give_neutral_field() {
        let f = SpatialPriorField::new(vec![], Decay::Linear);
        for (cx, cy) in [(0.0, 0.0), (0.5, 0.5), (1.0, 0.3), (0.2, 0.9)] {
            assert_eq!(f.value_at(cx, cy), 0.5);
        }
    }

    #[test]
    fn composite_corner_saturates() {
        let f = field("bottom left", Decay::Linear);
        assert_eq!(f.value_at(0.0, 1.0), 1.0);
    }

    #[test]
    fn linear_left_field_is_one_minus_x() {
        let f = field("left", Decay::Linear);
        assert_eq!(f.value_at(0.25, 0.7), 0.75);
        assert_eq!(f.value_at(0.25, 0.1), 0.75);
        assert_eq!(f.value_at(0.0, 0.5), 1.0);
        assert_eq!(f.value_at(1.0, 0.5), 0.0);
    }

    #[test]
    fn spatial_prior_reads_field_at_center() {
        let left = field("left", Decay::Linear);
        assert_eq!(spatial_prior(&left, &bx(0.0, 0.0, 0.0, 1.0)), 1.0);

        let neutral = SpatialPriorField::new(vec![], Decay::Linear);
        assert_eq!(spatial_prior(&neutral, &bx(0.1, 0.2, 0.9, 0.8)), 0.5);

        // Box center (0.4, 0.6); top field = 1 - cy.
        let top = field("top", Decay::Linear);
        assert!((spatial_prior(&top, &bx(0.2, 0.4, 0.6, 0.8)) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn composite_equals_mean_of_bases_pointwise() {
        let comp = field("bottom left", Decay::Linear);
        let both = SpatialPriorField::new(
            parse_terms("the left thing near the bottom edge").unwrap(),
            Decay::Linear,
        );
        assert_eq!(both.terms().len(), 2);
        for iy in 0..9 {
            for ix in 0..9 {
                let (cx, cy) = (ix as f64 / 8.0, iy as f64 / 8.0);
                assert!((comp.value_at(cx, cy) - both.value_at(cx, cy)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gaussian_decay_peaks_at_edge() {
        let f = field("left", Decay::Gaussian { sigma: Decay::DEFAULT_SIGMA });
        assert_eq!(f.value_at(0.0, 0.5), 1.0);
        let mid = f.value_at(0.5, 0.5);
        let far = f.value_at(1.0, 0.5);
        assert!(mid < 1.0 && far < mid && far > 0.0);
    }

    #[test]
    fn center_field_is_radial() {
        let f = field("center", Decay::Linear);
        assert_eq!(f.value_at(0.5, 0.5), 1.0);
        assert!(f.value_at(0.0, 0.0).abs() < 1e-12);
        assert!(f.value_at(0.5, 0.0) > f.value_at(0.0, 0.0));
    }

    #[test]
    fn left_prior_strictly_decreases_in_x() {
        for decay in [Decay::Linear, Decay::Gaussian { sigma: 0.35 }] {
            let f = field("left", decay);
            let mut last = f64::INFINITY;
            for i in 0..20 {
                let cx = i as f64 / 19.0;
                let v = spatial_prior(&f, &bx(cx, 0.4, cx, 0.6));
                assert!(v < last, "not strictly decreasing at cx={cx}");
                last = v;
            }
        }
    }

    #[test]
    fn field_range_stays_in_unit_interval() {
        let mut rng = SplitMix64::new(17);
        let fields = [
            field("left", Decay::Linear),
            field("bottom right", Decay::Linear),
            field("center", Decay::Gaussian { sigma: 0.2 }),
            field("top", Decay::Gaussian { sigma: 0.5 }),
        ];
        for _ in 0..500 {
            let (cx, cy) = (rng.next_f64(), rng.next_f64());
            for f in &fields {
                let v = f.value_at(cx, cy);
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn visual_prior_of_constant_grid() {
        let grid = RelevanceGrid::constant(8, 8, 0.3);
        let v = visual_prior(&grid, &bx(0.2, 0.2, 0.7, 0.7)).unwrap();
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn visual_prior_single_cell() {
        let (grid, _) = RelevanceGrid::from_values(2, 1, vec![0.0, 1.0]).unwrap();
        let v = visual_prior(&grid, &bx(0.5, 0.0, 1.0, 1.0)).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn visual_prior_full_box_mean() {
        let (grid, _) = RelevanceGrid::from_values(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let v = visual_prior(&grid, &bx(0.0, 0.0, 1.0, 1.0)).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn visual_prior_falls_back_to_nearest_cell() {
        let (grid, _) = RelevanceGrid::from_values(2, 1, vec![0.2, 0.9]).unwrap();
        // Degenerate box at x=0.9 covers no cell center; nearest is the right cell.
        let v = visual_prior(&grid, &bx(0.9, 0.5, 0.9, 0.5)).unwrap();
        assert_eq!(v, 0.9);
    }

    #[test]
    fn visual_prior_invariant_to_integer_upsampling() {
        let mut rng = SplitMix64::new(4);
        let base_vals: Vec<f64> = (0..16).map(|_| rng.next_f64()).collect();
        let (base, _) = RelevanceGrid::from_values(4, 4, base_vals.clone()).unwrap();
        for k in [2usize, 3] {
            let mut up = Vec::with_capacity(16 * k * k);
            for iy in 0..4 * k {
                for ix in 0..4 * k {
                    up.push(base_vals[(iy / k) * 4 + ix / k]);
                }
            }
            let (fine, _) = RelevanceGrid::from_values(4 * k, 4 * k, up).unwrap();
            // Boxes aligned to the coarse cell boundaries.
            for (x1, y1, x2, y2) in [(0.0, 0.0, 0.25, 0.25), (0.25, 0.5, 1.0, 1.0), (0.0, 0.0, 1.0, 1.0)] {
                let b = bx(x1, y1, x2, y2);
                let coarse = visual_prior(&base, &b).unwrap();
                let dense = visual_prior(&fine, &b).unwrap();
                assert!((coarse - dense).abs() < 1e-9, "k={k}: {coarse} vs {dense}");
            }
        }
    }

    #[test]
    fn grid_ingestion_clamps_and_counts() {
        let (grid, clamped) =
            RelevanceGrid::from_values(2, 2, vec![-0.5, 0.5, 1.5, f64::NAN]).unwrap();
        assert_eq!(clamped, 3);
        assert_eq!(grid.values(), &[0.0, 0.5, 1.0, 0.0]);
        assert!(matches!(
            RelevanceGrid::from_values(2, 2, vec![0.0; 3]),
            Err(PriorError::BadGrid { .. })
        ));
    }

    #[test]
    fn aggregate_is_clamped_mean() {
        let h = aggregate(&[0.5, 1.0, 0.8], &[0.5, 0.0, 0.4]).unwrap();
        assert!((h[0] - 0.5).abs() < 1e-15);
        assert!((h[1] - 0.5).abs() < 1e-15);
        assert!((h[2] - 0.6).abs() < 1e-15);
        assert!(matches!(
            aggregate(&[0.1], &[0.1, 0.2]),
            Err(PriorError::LengthMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn raster_export_matches_pointwise_evaluation() {
        let f = field("left", Decay::Linear);
        let raster = f.rasterize(4, 2);
        assert_eq!(raster.values.len(), 8);
        for iy in 0..2 {
            for ix in 0..4 {
                let expect = f.value_at((ix as f64 + 0.5) / 4.0, (iy as f64 + 0.5) / 2.0);
                assert_eq!(raster.values[iy * 4 + ix], expect);
            }
        }
        let text = raster.to_text();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("0.875000 0.625000"));
    }

    #[test]
    fn bundle_computation_end_to_end() {
        let sample = Sample {
            id: "s0".into(),
            phrase: "the red mug on the left".into(),
            candidates: vec![
                Candidate { bbox: bx(0.0, 0.3, 0.2, 0.5), score: 0.6 },
                Candidate { bbox: bx(0.8, 0.3, 1.0, 0.5), score: 0.6 },
            ],
            gt: Some(bx(0.0, 0.3, 0.2, 0.5)),
            category: "mug".into(),
        };
        let bundle = PriorBundle::compute(
            &sample,
            None,
            &SpatialVocab::default(),
            Decay::Linear,
        )
        .unwrap();
        assert_eq!(bundle.len(), 2);
        assert!(bundle.h_s[0] > bundle.h_s[1]);
        assert_eq!(bundle.h_v, vec![0.5, 0.5]);
        assert_eq!(bundle.p, vec![0.6, 0.6]);
        for j in 0..2 {
            assert!((bundle.h[j] - (bundle.h_s[j] + 0.5) / 2.0).abs() < 1e-15);
        }
    }
}
