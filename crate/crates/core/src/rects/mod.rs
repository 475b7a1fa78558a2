//! Heuristic figure-frame finder.
//!
//! Text is masked out with the page background, the page is run through a
//! handful of filters, and each binarized variant is border-traced. Closed
//! contours that simplify to a four-corner polygon with roughly parallel
//! opposite sides become candidates, which are then culled for size,
//! colorbar-like aspect ratios and near-duplicates.

mod kmeans;

pub use kmeans::{kmeans, Clustering};

use image::{GrayImage, Luma};
use imageproc::contours::{find_contours, BorderType};
use imageproc::distance_transform::Norm;
use imageproc::morphology::dilate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox};
use crate::hocr::Word;

pub const THRESHOLD_QUANTILES: [f64; 3] = [0.5, 0.7, 0.9];
pub const POLYGON_TOLERANCE: f64 = 0.02;
pub const PARALLEL_TOLERANCE_DEG: f64 = 5.0;
pub const MIN_AREA_FRAC: f64 = 0.005;
pub const MAX_ASPECT: f64 = 8.0;
pub const GROUPING_IOU: f64 = 0.8;
pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_SEED: u64 = 0x05ca_9f16;
/// Candidates from different filters closer than this on every edge are one rectangle.
const DUPLICATE_EDGE_PX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum RectError {
    #[error("image is {image_w}x{image_h} but page is {page_w}x{page_h}")]
    DimensionMismatch {
        image_w: u32,
        image_h: u32,
        page_w: u32,
        page_h: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectCandidate {
    pub bbox: BBox,
    pub source_filter: String,
}

impl RectCandidate {
    /// Candidates are always four-cornered polygons.
    pub fn corner_count(&self) -> usize {
        4
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.bbox.width() / self.bbox.height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterVariant {
    Gradient,
    Dilation,
    Inversion,
    Quantile(f64),
}

impl FilterVariant {
    pub fn all() -> Vec<FilterVariant> {
        let mut v = vec![FilterVariant::Gradient, FilterVariant::Dilation, FilterVariant::Inversion];
        v.extend(THRESHOLD_QUANTILES.iter().map(|q| FilterVariant::Quantile(*q)));
        v
    }

    pub fn label(&self) -> String {
        match self {
            FilterVariant::Gradient => "gradient".into(),
            FilterVariant::Dilation => "dilation".into(),
            FilterVariant::Inversion => "inversion".into(),
            FilterVariant::Quantile(q) => format!("threshold_q{:02}", (q * 100.0).round() as u32),
        }
    }

    /// Foreground mask (255) for this variant.
    pub fn binarize(&self, image: &GrayImage) -> GrayImage {
        match self {
            FilterVariant::Gradient => {
                let (w, h) = image.dimensions();
                let at = |x: i64, y: i64| {
                    image.get_pixel(x.clamp(0, w as i64 - 1) as u32, y.clamp(0, h as i64 - 1) as u32).0[0] as i64
                };
                let edges = GrayImage::from_fn(w, h, |x, y| {
                    let (x, y) = (x as i64, y as i64);
                    let gx = at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1)
                        - at(x - 1, y - 1)
                        - 2 * at(x - 1, y)
                        - at(x - 1, y + 1);
                    let gy = at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1)
                        - at(x - 1, y - 1)
                        - 2 * at(x, y - 1)
                        - at(x + 1, y - 1);
                    // A full black/white step gives a magnitude of 1020.
                    Luma([if gx * gx + gy * gy > 255 * 255 { 255 } else { 0 }])
                });
                // Both sides of a thin line respond; join them into one band.
                dilate(&edges, Norm::LInf, 1)
            }
            FilterVariant::Dilation => {
                let dark = threshold_below(image, 128);
                dilate(&dark, Norm::LInf, 1)
            }
            FilterVariant::Inversion => {
                let mut inv = image.clone();
                inv.pixels_mut().for_each(|p| p.0[0] = 255 - p.0[0]);
                GrayImage::from_fn(inv.width(), inv.height(), |x, y| {
                    Luma([if inv.get_pixel(x, y).0[0] > 127 { 255 } else { 0 }])
                })
            }
            FilterVariant::Quantile(q) => threshold_below(image, quantile_value(image, *q)),
        }
    }
}

fn threshold_below(image: &GrayImage, level: u8) -> GrayImage {
    GrayImage::from_fn(image.width(), image.height(), |x, y| {
        Luma([if image.get_pixel(x, y).0[0] < level { 255 } else { 0 }])
    })
}

/// Smallest intensity whose cumulative share reaches `q`.
fn quantile_value(image: &GrayImage, q: f64) -> u8 {
    let mut hist = [0u64; 256];
    image.pixels().for_each(|p| hist[p.0[0] as usize] += 1);
    let target = q * (image.width() as f64 * image.height() as f64);
    let mut acc = 0u64;
    for (v, n) in hist.iter().enumerate() {
        acc += n;
        if acc as f64 >= target {
            return v as u8;
        }
    }
    255
}

/// Most frequent pixel value; ties go to the brighter value.
pub fn modal_value(image: &GrayImage) -> u8 {
    let mut hist = [0u64; 256];
    image.pixels().for_each(|p| hist[p.0[0] as usize] += 1);
    (0..256).rev().max_by_key(|v| hist[*v]).unwrap_or(255) as u8
}

/// Paint every word box with the page's modal (background) value.
pub fn mask_words(image: &GrayImage, words: &[Word], page_w: u32, page_h: u32) -> Result<GrayImage, RectError> {
    if image.width() != page_w || image.height() != page_h {
        return Err(RectError::DimensionMismatch {
            image_w: image.width(),
            image_h: image.height(),
            page_w,
            page_h,
        });
    }
    let bg = modal_value(image);
    let mut out = image.clone();
    for w in words {
        let p = w.bbox.to_pixels();
        for y in p.y0.max(0)..p.y1.min(page_h as i64) {
            for x in p.x0.max(0)..p.x1.min(page_w as i64) {
                out.put_pixel(x as u32, y as u32, Luma([bg]));
            }
        }
    }
    Ok(out)
}

fn point_line_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = (dx * dx + dy * dy).sqrt();
    if len == 0.0 {
        return ((p.0 - a.0).powi(2) + (p.1 - a.1).powi(2)).sqrt();
    }
    (dy * p.0 - dx * p.1 + b.0 * a.1 - b.1 * a.0).abs() / len
}

/// Douglas–Peucker on an open polyline; keeps both endpoints.
fn simplify_open(points: &[(f64, f64)], epsilon: f64, out: &mut Vec<(f64, f64)>) {
    let (first, last) = (points[0], points[points.len() - 1]);
    let (idx, dmax) = points[1..points.len() - 1]
        .iter()
        .enumerate()
        .map(|(i, p)| (i + 1, point_line_distance(*p, first, last)))
        .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    if dmax > epsilon {
        simplify_open(&points[..=idx], epsilon, out);
        out.pop();
        simplify_open(&points[idx..], epsilon, out);
    } else {
        out.push(first);
        out.push(last);
    }
}

/// Douglas–Peucker on a closed contour, split at the point farthest from the start.
pub fn approximate_polygon(contour: &[(f64, f64)], epsilon: f64) -> Vec<(f64, f64)> {
    if contour.len() < 3 {
        return contour.to_vec();
    }
    let start = contour[0];
    let far = (1..contour.len())
        .max_by(|a, b| {
            let da = (contour[*a].0 - start.0).powi(2) + (contour[*a].1 - start.1).powi(2);
            let db = (contour[*b].0 - start.0).powi(2) + (contour[*b].1 - start.1).powi(2);
            da.total_cmp(&db).then(b.cmp(a))
        })
        .unwrap();
    let mut poly = Vec::new();
    simplify_open(&contour[..=far], epsilon, &mut poly);
    poly.pop();
    let mut tail: Vec<(f64, f64)> = contour[far..].to_vec();
    tail.push(start);
    simplify_open(&tail, epsilon, &mut poly);
    poly.pop();
    // The split points are forced vertices; drop them if they lie on a straight run.
    let mut changed = true;
    while changed && poly.len() > 3 {
        changed = false;
        for i in 0..poly.len() {
            let n = poly.len();
            let (prev, next) = (poly[(i + n - 1) % n], poly[(i + 1) % n]);
            if point_line_distance(poly[i], prev, next) <= epsilon {
                poly.remove(i);
                changed = true;
                break;
            }
        }
    }
    poly
}

fn perimeter(contour: &[(f64, f64)]) -> f64 {
    contour
        .iter()
        .zip(contour.iter().cycle().skip(1))
        .map(|(a, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
        .sum()
}

fn line_angle_diff(a: (f64, f64), b: (f64, f64)) -> f64 {
    let ta = a.1.atan2(a.0).to_degrees();
    let tb = b.1.atan2(b.0).to_degrees();
    let d = (ta - tb).rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Four vertices with both pairs of opposite sides within tolerance of parallel.
pub fn is_quadrilateral_frame(poly: &[(f64, f64)]) -> bool {
    if poly.len() != 4 {
        return false;
    }
    let side = |i: usize| {
        let (a, b) = (poly[i], poly[(i + 1) % 4]);
        (b.0 - a.0, b.1 - a.1)
    };
    line_angle_diff(side(0), side(2)) <= PARALLEL_TOLERANCE_DEG && line_angle_diff(side(1), side(3)) <= PARALLEL_TOLERANCE_DEG
}

fn near_duplicate(a: &BBox, b: &BBox) -> bool {
    a.coords().iter().zip(b.coords()).all(|(x, y)| (x - y).abs() <= DUPLICATE_EDGE_PX)
}

fn rectangles_in_mask(mask: &GrayImage, label: &str) -> Vec<RectCandidate> {
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    find_contours::<i32>(mask)
        .into_iter()
        .filter(|c| c.border_type == BorderType::Outer && c.points.len() >= 4)
        .filter_map(|c| {
            let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.x as f64, p.y as f64)).collect();
            let poly = approximate_polygon(&pts, POLYGON_TOLERANCE * perimeter(&pts));
            if !is_quadrilateral_frame(&poly) {
                return None;
            }
            let x0 = poly.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let y0 = poly.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let x1 = poly.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + 1.0;
            let y1 = poly.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + 1.0;
            let bbox = BBox::new(x0, y0, x1, y1).ok()?.clamp_to(w, h)?;
            Some(RectCandidate {
                bbox,
                source_filter: label.to_string(),
            })
        })
        .collect()
}

/// Pool rectangle candidates over every filter variant of a word-masked page.
///
/// Candidates that agree within two pixels on every edge are reported once.
pub fn find_rectangles(image: &GrayImage) -> Vec<RectCandidate> {
    let mut pooled: Vec<RectCandidate> = Vec::new();
    for variant in FilterVariant::all() {
        let mask = variant.binarize(image);
        for cand in rectangles_in_mask(&mask, &variant.label()) {
            if !pooled.iter().any(|p| near_duplicate(&p.bbox, &cand.bbox)) {
                pooled.push(cand);
            }
        }
    }
    pooled
}

fn corners(b: &BBox) -> Vec<f64> {
    vec![b.x0(), b.y0(), b.x1(), b.y0(), b.x1(), b.y1(), b.x0(), b.y1()]
}

fn canonical_order(cands: &mut [RectCandidate]) {
    cands.sort_by(|a, b| {
        a.bbox
            .coords()
            .iter()
            .zip(b.bbox.coords())
            .map(|(x, y)| x.total_cmp(&y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.source_filter.cmp(&b.source_filter))
    });
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Greedy grouping by IOU; the group count is the K for clustering.
fn iou_group_count(cands: &[RectCandidate]) -> usize {
    let mut seeds: Vec<&BBox> = Vec::new();
    let mut order: Vec<&RectCandidate> = cands.iter().collect();
    order.sort_by(|a, b| b.bbox.area().total_cmp(&a.bbox.area()));
    for c in order {
        if !seeds.iter().any(|s| iou(s, &c.bbox) >= GROUPING_IOU) {
            seeds.push(&c.bbox);
        }
    }
    seeds.len()
}

fn cull_once(cands: &[RectCandidate], page_w: f64, page_h: f64) -> Vec<RectCandidate> {
    let min_area = MIN_AREA_FRAC * page_w * page_h;
    let mut kept: Vec<RectCandidate> = cands
        .iter()
        .filter(|c| c.bbox.area() >= min_area)
        .filter(|c| (1.0 / MAX_ASPECT..=MAX_ASPECT).contains(&c.aspect_ratio()))
        .cloned()
        .collect();
    canonical_order(&mut kept);
    if kept.len() <= 1 {
        return kept;
    }
    let k = iou_group_count(&kept);
    let points: Vec<Vec<f64>> = kept.iter().map(|c| corners(&c.bbox)).collect();
    let clustering = kmeans(&points, k, KMEANS_RESTARTS, KMEANS_SEED);
    let mut out = Vec::new();
    for cluster in 0..clustering.centroids.len() {
        let members: Vec<&RectCandidate> = kept
            .iter()
            .zip(&clustering.assignments)
            .filter(|(_, a)| **a == cluster)
            .map(|(c, _)| c)
            .collect();
        if members.is_empty() {
            continue;
        }
        let med = |f: fn(&BBox) -> f64| median(members.iter().map(|m| f(&m.bbox)).collect());
        let Ok(bbox) = BBox::new(med(BBox::x0), med(BBox::y0), med(BBox::x1), med(BBox::y1)) else {
            continue;
        };
        let closest = members
            .iter()
            .min_by(|a, b| {
                let da: f64 = a.bbox.coords().iter().zip(bbox.coords()).map(|(x, y)| (x - y).abs()).sum();
                let db: f64 = b.bbox.coords().iter().zip(bbox.coords()).map(|(x, y)| (x - y).abs()).sum();
                da.total_cmp(&db)
            })
            .unwrap();
        out.push(RectCandidate {
            bbox,
            source_filter: closest.source_filter.clone(),
        });
    }
    canonical_order(&mut out);
    out
}

/// Drop small and colorbar-shaped candidates, then collapse near-duplicates
/// to one median-corner representative per K-Means cluster.
///
/// Repeats until nothing changes, so the result is a fixed point.
pub fn cull_candidates(cands: &[RectCandidate], page_w: u32, page_h: u32) -> Vec<RectCandidate> {
    let (w, h) = (page_w as f64, page_h as f64);
    let mut current: Vec<RectCandidate> = cands.iter().filter_map(|c| {
        c.bbox.clamp_to(w, h).map(|bbox| RectCandidate { bbox, source_filter: c.source_filter.clone() })
    }).collect();
    canonical_order(&mut current);
    loop {
        let next = cull_once(&current, w, h);
        if next == current {
            return next;
        }
        current = next;
    }
}

/// Mask, find and cull in one call.
pub fn detect_rectangles(image: &GrayImage, words: &[Word], page_w: u32, page_h: u32) -> Result<Vec<RectCandidate>, RectError> {
    let masked = mask_words(image, words, page_w, page_h)?;
    Ok(cull_candidates(&find_rectangles(&masked), page_w, page_h))
}
