//! Axis-aligned rectangle arithmetic.
//!
//! Boxes live in fractional page pixels with the origin at the top-left.
//! Overlap measures (IOU, area in excess, area lost) are computed on the
//! boxes after rounding every coordinate to the nearest whole pixel, so
//! that fractional post-processing output compares at the precision of
//! hand-drawn ground truth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box coordinates must be finite and non-negative: {0:?}")]
    NotFinite([f64; 4]),
    #[error("box has zero or negative extent: {0:?}")]
    Empty([f64; 4]),
}

/// Axis-aligned rectangle `[x0, x1) × [y0, y1)` in page pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        let c = [x0, y0, x1, y1];
        if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(GeometryError::NotFinite(c));
        }
        if x0 >= x1 || y0 >= y1 {
            return Err(GeometryError::Empty(c));
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn y0(&self) -> f64 {
        self.y0
    }
    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Half-open containment, matching how boxes cover pixels.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }

    /// True when the two boxes share a region of positive area.
    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x0.max(other.x0) < self.x1.min(other.x1) && self.y0.max(other.y0) < self.y1.min(other.y1)
    }

    /// Minimal box containing both inputs.
    pub fn expand_to_include(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    /// Replace individual edges, keeping the result valid or returning `None`.
    pub fn with_edges(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<BBox> {
        BBox::new(x0, y0, x1, y1).ok()
    }

    /// Clip to `[0, width] × [0, height]`; `None` when nothing is left.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        BBox::new(
            self.x0.clamp(0.0, width),
            self.y0.clamp(0.0, height),
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
        )
        .ok()
    }

    pub fn scale(&self, sx: f64, sy: f64) -> BBox {
        BBox {
            x0: self.x0 * sx,
            y0: self.y0 * sy,
            x1: self.x1 * sx,
            y1: self.y1 * sy,
        }
    }

    /// Coordinates rounded to the nearest pixel, ties away from zero.
    pub fn to_pixels(&self) -> PixelRect {
        PixelRect {
            x0: self.x0.round() as i64,
            y0: self.y0.round() as i64,
            x1: self.x1.round() as i64,
            y1: self.y1.round() as i64,
        }
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.coords()
    }
}

/// A pixel-rounded box. May be degenerate (zero area) after rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl PixelRect {
    pub fn area(&self) -> i64 {
        (self.x1 - self.x0).max(0) * (self.y1 - self.y0).max(0)
    }

    pub fn intersection_area(&self, other: &PixelRect) -> i64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0);
        w * h
    }
}

/// IOU and the two ground-truth-relative area fractions for a truth/found pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaPair {
    pub iou: f64,
    /// Found pixels outside the truth box, over truth area.
    pub excess_frac: f64,
    /// Truth pixels outside the found box, over truth area.
    pub lost_frac: f64,
}

/// Intersection over union of the pixel-rounded boxes.
///
/// Degenerate rounded boxes count as area zero, which yields 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    pixel_iou(&a.to_pixels(), &b.to_pixels())
}

fn pixel_iou(a: &PixelRect, b: &PixelRect) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if inter == 0 || union <= 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Area in excess and area lost of `found` relative to `truth`.
///
/// A truth box that rounds to zero area reports nothing recovered:
/// `lost_frac = 1`, `excess_frac = 0`, `iou = 0`.
pub fn excess_lost(truth: &BBox, found: &BBox) -> AreaPair {
    let t = truth.to_pixels();
    let f = found.to_pixels();
    let t_area = t.area();
    if t_area == 0 {
        return AreaPair {
            iou: 0.0,
            excess_frac: 0.0,
            lost_frac: 1.0,
        };
    }
    let inter = t.intersection_area(&f);
    AreaPair {
        iou: pixel_iou(&t, &f),
        excess_frac: (f.area() - inter) as f64 / t_area as f64,
        lost_frac: (t_area - inter) as f64 / t_area as f64,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    /// Per-pixel membership count over integer boxes; independent of `PixelRect`.
    fn brute_counts(a: [i64; 4], f: [i64; 4]) -> (i64, i64, i64, i64) {
        let inside = |r: [i64; 4], x: i64, y: i64| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
        let (mut both, mut only_a, mut only_f, mut any) = (0, 0, 0, 0);
        for y in 0..200 {
            for x in 0..200 {
                let (ia, if_) = (inside(a, x, y), inside(f, x, y));
                both += (ia && if_) as i64;
                only_a += (ia && !if_) as i64;
                only_f += (!ia && if_) as i64;
                any += (ia || if_) as i64;
            }
        }
        (both, only_a, only_f, any)
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(20., 20., 30., 30.)), 0.0);
        // 50 shared pixels over a 150-pixel union.
        let v = iou(&b(0., 0., 10., 10.), &b(5., 0., 15., 10.));
        assert!((v - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0.4, 0., 10.4, 10.)), 1.0);
    }

    #[test]
    fn rounding_ties_go_away_from_zero() {
        let p = b(0.5, 1.5, 2.5, 3.49).to_pixels();
        assert_eq!(p, PixelRect { x0: 1, y0: 2, x1: 3, y1: 3 });
    }

    #[test]
    fn degenerate_after_rounding_gives_zero() {
        let sliver = b(3.6, 0., 4.4, 10.);
        assert_eq!(sliver.to_pixels().area(), 0);
        assert_eq!(iou(&sliver, &sliver), 0.0);
    }

    #[test]
    fn excess_lost_examples() {
        let t = b(0., 0., 100., 100.);
        assert_eq!(
            excess_lost(&t, &t),
            AreaPair { iou: 1.0, excess_frac: 0.0, lost_frac: 0.0 }
        );
        let p = excess_lost(&t, &b(0., 0., 100., 110.));
        assert!((p.iou - 100.0 / 110.0).abs() < 1e-12);
        assert!((p.excess_frac - 0.10).abs() < 1e-12);
        assert_eq!(p.lost_frac, 0.0);
        let p = excess_lost(&t, &b(0., 5., 100., 100.));
        assert!((p.iou - 0.95).abs() < 1e-12);
        assert_eq!(p.excess_frac, 0.0);
        assert!((p.lost_frac - 0.05).abs() < 1e-12);
    }

    #[test]
    fn expand_examples() {
        let u = b(0., 0., 1., 1.);
        assert_eq!(u.expand_to_include(&u), u);
        assert_eq!(u.expand_to_include(&b(2., 2., 3., 3.)), b(0., 0., 3., 3.));
        assert_eq!(b(1., 1., 4., 2.).expand_to_include(&b(0., 1.5, 2., 3.)), b(0., 1., 4., 3.));
    }

    #[test]
    fn rejects_invalid_boxes() {
        assert!(BBox::new(1., 0., 1., 5.).is_err());
        assert!(BBox::new(0., 0., f64::NAN, 5.).is_err());
        assert!(BBox::new(-1., 0., 3., 5.).is_err());
        assert!(serde_json::from_str::<BBox>("[5, 0, 1, 1]").is_err());
        assert_eq!(serde_json::from_str::<BBox>("[0, 0, 1, 2]").unwrap(), b(0., 0., 1., 2.));
    }

    fn int_box() -> impl Strategy<Value = [i64; 4]> {
        (0i64..199, 0i64..199)
            .prop_flat_map(|(x0, y0)| (Just(x0), Just(y0), (x0 + 1)..=200, (y0 + 1)..=200))
            .prop_map(|(x0, y0, x1, y1)| [x0, y0, x1, y1])
    }

    fn to_box(r: [i64; 4]) -> BBox {
        b(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn iou_matches_pixel_brute_force(a in int_box(), f in int_box()) {
            let (both, only_a, only_f, any) = brute_counts(a, f);
            let (ba, bf) = (to_box(a), to_box(f));
            let expect = if both == 0 { 0.0 } else { both as f64 / any as f64 };
            prop_assert_eq!(iou(&ba, &bf), expect);
            let p = excess_lost(&ba, &bf);
            let t_area = both + only_a;
            prop_assert_eq!(p.excess_frac, only_f as f64 / t_area as f64);
            prop_assert_eq!(p.lost_frac, only_a as f64 / t_area as f64);
        }

        #[test]
        fn iou_symmetric_and_bounded(a in int_box(), f in int_box(), dx in 0.0..1.0f64) {
            let ba = to_box(a);
            let bf = to_box(f).scale(1.0, 1.0);
            let shifted = BBox::new(bf.x0() + dx, bf.y0(), bf.x1() + dx, bf.y1()).unwrap();
            let v = iou(&ba, &shifted);
            prop_assert_eq!(v, iou(&shifted, &ba));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v == 1.0, ba.to_pixels() == shifted.to_pixels());
        }

        #[test]
        fn lost_plus_intersection_is_truth(a in int_box(), f in int_box()) {
            let (t, fp) = (to_box(a).to_pixels(), to_box(f).to_pixels());
            let p = excess_lost(&to_box(a), &to_box(f));
            let lost_px = (p.lost_frac * t.area() as f64).round() as i64;
            prop_assert_eq!(lost_px + t.intersection_area(&fp), t.area());
            prop_assert!(p.lost_frac <= 1.0);
        }
    }
}
