//! Axis-aligned boxes in normalized image coordinates, with the IoU and
//! Generalized IoU scores used by matching costs and box losses.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Box in normalized xyxy coordinates. All coordinates lie in [0, 1] with
/// `x1 <= x2` and `y1 <= y2`; zero-area boxes are valid inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxN {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Rejected box coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum BoxError {
    /// A coordinate is NaN or outside [0, 1].
    OutOfRange { coord: &'static str, value: f64 },
    /// x2 < x1 or y2 < y1.
    NegativeExtent { axis: &'static str, lo: f64, hi: f64 },
}

impl fmt::Display for BoxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OutOfRange { coord, value } => {
                write!(f, "coordinate {coord} = {value} outside [0, 1]")
            }
            Self::NegativeExtent { axis, lo, hi } => {
                write!(f, "negative {axis} extent: {hi} < {lo}")
            }
        }
    }
}

impl std::error::Error for BoxError {}

impl BoxN {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, BoxError> {
        for (coord, value) in [("x1", x1), ("y1", y1), ("x2", x2), ("y2", y2)] {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(BoxError::OutOfRange { coord, value });
            }
        }
        if x2 < x1 {
            return Err(BoxError::NegativeExtent { axis: "x", lo: x1, hi: x2 });
        }
        if y2 < y1 {
            return Err(BoxError::NegativeExtent { axis: "y", lo: y1, hi: y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Convert a pixel-space `[x, y, w, h]` box to normalized xyxy given the
    /// image dimensions. Results are clamped to the image before validation so
    /// detector dumps that overshoot by a pixel still ingest.
    pub fn from_pixel_xywh(
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        img_w: u32,
        img_h: u32,
    ) -> Result<Self, BoxError> {
        if img_w == 0 || img_h == 0 {
            return Err(BoxError::OutOfRange { coord: "image", value: 0.0 });
        }
        if w < 0.0 {
            return Err(BoxError::NegativeExtent { axis: "x", lo: x, hi: x + w });
        }
        if h < 0.0 {
            return Err(BoxError::NegativeExtent { axis: "y", lo: y, hi: y + h });
        }
        let (fw, fh) = (img_w as f64, img_h as f64);
        let clamp = |v: f64| v.clamp(0.0, 1.0);
        Self::new(
            clamp(x / fw),
            clamp(y / fh),
            clamp((x + w) / fw),
            clamp((y + h) / fh),
        )
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Box center `((x1+x2)/2, (y1+y2)/2)`.
    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

fn intersection_area(a: &BoxN, b: &BoxN) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    w * h
}

/// Intersection over union in [0, 1]; 0 when the union has zero area.
pub fn iou(a: &BoxN, b: &BoxN) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU in [-1, 1]: IoU minus the enclosure penalty
/// `(area(hull) - area(union)) / area(hull)`; 0 when the hull has zero area.
pub fn giou(a: &BoxN, b: &BoxN) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let hull_w = a.x2.max(b.x2) - a.x1.min(b.x1);
    let hull_h = a.y2.max(b.y2) - a.y1.min(b.y1);
    let hull = hull_w * hull_h;
    if hull <= 0.0 {
        return 0.0;
    }
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    iou - (hull - union) / hull
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoxN {
        BoxN::new(x1, y1, x2, y2).unwrap()
    }

    fn random_box(rng: &mut SplitMix64) -> BoxN {
        let xa = rng.next_f64();
        let xb = rng.next_f64();
        let ya = rng.next_f64();
        let yb = rng.next_f64();
        bx(xa.min(xb), ya.min(yb), xa.max(xb), ya.max(yb))
    }

    #[test]
    fn center_of_full_image_box() {
        assert_eq!(bx(0.0, 0.0, 1.0, 1.0).center(), (0.5, 0.5));
    }

    #[test]
    fn center_of_degenerate_width_box() {
        let (cx, cy) = bx(0.2, 0.2, 0.2, 0.6).center();
        assert!((cx - 0.2).abs() < 1e-15);
        assert!((cy - 0.4).abs() < 1e-15);
    }

    #[test]
    fn center_is_coordinate_midpoint() {
        let (cx, cy) = bx(0.1, 0.3, 0.5, 0.7).center();
        // Midpoints computed by hand: (0.1+0.5)/2, (0.3+0.7)/2.
        assert!((cx - 0.3).abs() < 1e-15);
        assert!((cy - 0.5).abs() < 1e-15);
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = bx(0.1, 0.1, 0.4, 0.4);
        assert_eq!(iou(&a, &a), 1.0);
        let b = bx(0.6, 0.6, 0.9, 0.9);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_quarter_overlap() {
        // Areas by hand: inter 0.25^2 = 0.0625, union 0.25 + 0.25 - 0.0625 = 0.4375.
        let a = bx(0.0, 0.0, 0.5, 0.5);
        let b = bx(0.25, 0.25, 0.75, 0.75);
        assert!((iou(&a, &b) - 0.0625 / 0.4375).abs() < 1e-12);
    }

    #[test]
    fn iou_zero_union_convention() {
        let a = bx(0.3, 0.3, 0.3, 0.3);
        assert_eq!(iou(&a, &a), 0.0);
    }

    #[test]
    fn giou_identity() {
        let a = bx(0.2, 0.1, 0.7, 0.9);
        assert_eq!(giou(&a, &a), 1.0);
    }

    #[test]
    fn giou_touching_halves_is_zero() {
        let a = bx(0.0, 0.0, 0.5, 1.0);
        let b = bx(0.5, 0.0, 1.0, 1.0);
        assert_eq!(giou(&a, &b), 0.0);
    }

    #[test]
    fn giou_separated_strips() {
        // IoU 0, hull area 1, union 0.5: giou = -(1 - 0.5) / 1.
        let a = bx(0.0, 0.0, 0.25, 1.0);
        let b = bx(0.75, 0.0, 1.0, 1.0);
        assert!((giou(&a, &b) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn giou_zero_hull_convention() {
        let a = bx(0.4, 0.4, 0.4, 0.4);
        assert_eq!(giou(&a, &a), 0.0);
    }

    #[test]
    fn rejects_bad_boxes() {
        assert!(matches!(
            BoxN::new(0.5, 0.0, 0.2, 1.0),
            Err(BoxError::NegativeExtent { axis: "x", .. })
        ));
        assert!(matches!(
            BoxN::new(-0.1, 0.0, 0.2, 1.0),
            Err(BoxError::OutOfRange { coord: "x1", .. })
        ));
        assert!(matches!(
            BoxN::new(0.0, 0.0, 0.2, 1.2),
            Err(BoxError::OutOfRange { coord: "y2", .. })
        ));
        assert!(BoxN::new(0.3, 0.3, 0.3, 0.3).is_ok());
    }

    #[test]
    fn pixel_xywh_conversion() {
        let b = BoxN::from_pixel_xywh(64.0, 32.0, 128.0, 64.0, 640, 320).unwrap();
        assert!((b.x1 - 0.1).abs() < 1e-12);
        assert!((b.y1 - 0.1).abs() < 1e-12);
        assert!((b.x2 - 0.3).abs() < 1e-12);
        assert!((b.y2 - 0.3).abs() < 1e-12);
        assert!(BoxN::from_pixel_xywh(0.0, 0.0, -5.0, 5.0, 100, 100).is_err());
    }

    #[test]
    fn scores_are_symmetric_and_bounded() {
        let mut rng = SplitMix64::new(2024);
        for _ in 0..1000 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let i = iou(&a, &b);
            let g = giou(&a, &b);
            assert_eq!(i, iou(&b, &a));
            assert_eq!(g, giou(&b, &a));
            assert!((0.0..=1.0).contains(&i));
            assert!((-1.0..=1.0).contains(&g));
        }
    }

    #[test]
    fn giou_equals_iou_under_containment() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..500 {
            let outer = random_box(&mut rng);
            if outer.area() <= 0.0 {
                continue;
            }
            let fx1 = rng.next_f64();
            let fx2 = rng.next_f64();
            let fy1 = rng.next_f64();
            let fy2 = rng.next_f64();
            let inner = bx(
                outer.x1 + outer.width() * fx1.min(fx2),
                outer.y1 + outer.height() * fy1.min(fy2),
                outer.x1 + outer.width() * fx1.max(fx2),
                outer.y1 + outer.height() * fy1.max(fy2),
            );
            let diff = (giou(&outer, &inner) - iou(&outer, &inner)).abs();
            assert!(diff < 1e-12, "containment giou != iou: {diff}");
        }
    }

    #[test]
    fn translation_invariance() {
        let mut rng = SplitMix64::new(31);
        for _ in 0..500 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let max_x = a.x2.max(b.x2);
            let max_y = a.y2.max(b.y2);
            let dx = rng.next_f64() * (1.0 - max_x);
            let dy = rng.next_f64() * (1.0 - max_y);
            let shift = |v: &BoxN| bx(v.x1 + dx, v.y1 + dy, v.x2 + dx, v.y2 + dy);
            let (sa, sb) = (shift(&a), shift(&b));
            assert!((iou(&a, &b) - iou(&sa, &sb)).abs() < 1e-12);
            assert!((giou(&a, &b) - giou(&sa, &sb)).abs() < 1e-12);
        }
    }
}
