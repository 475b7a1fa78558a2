//! Refinement of raw detections into figure/caption pairs.
//!
//! Ten steps, applied in order up to [`PipelineConfig::last_step`]:
//!
//! 1. class-wise non-maximum suppression and score cut
//! 2. cross-class suppression of overlapping boxes
//! 3. adoption of PDF-mined caption geometry
//! 4. keyword-driven heuristic captions from the OCR layout
//! 5. caption growth over OCR word and paragraph boxes
//! 6. figure growth over image-processing rectangles
//! 7. removal of page-sized captions
//! 8. caption-to-figure pairing
//! 9. figure extension down to the caption top
//! 10. figure extension to the caption's horizontal edges
//!
//! "Bottom", "top" and "horizontal" follow the page rotation, so a page
//! whose text runs bottom-to-top has its figure bottoms on the right.

use image::{GrayImage, Luma};
use imageproc::contours::{find_contours, BorderType};
use imageproc::filter::gaussian_blur_f32;
use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};
use crate::hocr::{Page, Rotation, Word};
use crate::rects::RectCandidate;

/// Fraction of full mask intensity at which the blurred word mask is cut.
/// An isolated text line peaks near 0.38 of full intensity after blurring,
/// less its inter-word gaps; blocks over ~2.6 word heights apart stay split.
const BLOB_THRESHOLD: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetClass {
    Figure,
    #[serde(alias = "caption")]
    FigureCaption,
    MathFormula,
    Table,
}

impl DetClass {
    pub const ALL: [DetClass; 4] = [DetClass::Figure, DetClass::FigureCaption, DetClass::MathFormula, DetClass::Table];

    /// Index used by the normalized-text annotation format.
    pub fn index(self) -> usize {
        DetClass::ALL.iter().position(|c| *c == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<DetClass> {
        DetClass::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DetClass::Figure => "figure",
            DetClass::FigureCaption => "figure_caption",
            DetClass::MathFormula => "math_formula",
            DetClass::Table => "table",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Model,
    Heuristic,
    Mined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    #[serde(rename = "class")]
    pub cls: DetClass,
    pub score: f64,
    #[serde(default)]
    pub origin: Origin,
}

impl Detection {
    pub fn new(bbox: BBox, cls: DetClass, score: f64) -> Self {
        Detection {
            bbox,
            cls,
            score: score.clamp(0.0, 1.0),
            origin: Origin::Model,
        }
    }

    fn is_caption(&self) -> bool {
        self.cls == DetClass::FigureCaption
    }

    fn is_figure(&self) -> bool {
        self.cls == DetClass::Figure
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedResult {
    pub figure: Detection,
    pub caption: Option<Detection>,
    pub page_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub last_step: u8,
    pub nms_iou: f64,
    pub score_thresh: f64,
    pub dedup_iou: f64,
    pub caption_area_max_frac: f64,
    pub grow_max_iters: usize,
    pub keywords: Vec<String>,
    pub fuzz_max_edits: usize,
    pub heuristic_caption_score: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            last_step: 10,
            nms_iou: 0.5,
            score_thresh: 0.25,
            dedup_iou: 0.25,
            caption_area_max_frac: 0.75,
            grow_max_iters: 5,
            keywords: vec!["Fig.".into(), "Figure".into(), "Plate".into()],
            fuzz_max_edits: 1,
            heuristic_caption_score: 0.5,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid pipeline config: {0}")]
pub struct ConfigError(pub String);

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=10).contains(&self.last_step) {
            return Err(ConfigError(format!("last_step {} outside 1..=10", self.last_step)));
        }
        for (name, v) in [
            ("nms_iou", self.nms_iou),
            ("dedup_iou", self.dedup_iou),
            ("caption_area_max_frac", self.caption_area_max_frac),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ConfigError(format!("{name} = {v} outside (0, 1]")));
            }
        }
        for (name, v) in [("score_thresh", self.score_thresh), ("heuristic_caption_score", self.heuristic_caption_score)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn cmp_f64(a: f64, b: f64) -> std::cmp::Ordering {
    a.total_cmp(&b)
}

/// Order-independent canonical order: class, score descending, then geometry.
pub fn canonical_sort(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        a.cls
            .cmp(&b.cls)
            .then(cmp_f64(b.score, a.score))
            .then_with(|| {
                a.bbox
                    .coords()
                    .iter()
                    .zip(b.bbox.coords())
                    .map(|(x, y)| cmp_f64(*x, y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then((a.origin as u8).cmp(&(b.origin as u8)))
    });
}

/// Priority used by both suppression steps: score, then larger area, then
/// upper-left position.
fn suppression_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&dets[i], &dets[j]);
        cmp_f64(b.score, a.score)
            .then(cmp_f64(b.bbox.area(), a.bbox.area()))
            .then(cmp_f64(a.bbox.y0(), b.bbox.y0()))
            .then(cmp_f64(a.bbox.x0(), b.bbox.x0()))
            .then(i.cmp(&j))
    });
    order
}

fn greedy_suppress(dets: &[Detection], iou_thresh: f64, same_class_only: bool) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in suppression_order(dets) {
        let d = dets[i];
        let suppressed = kept
            .iter()
            .any(|k| (!same_class_only || k.cls == d.cls) && iou(&k.bbox, &d.bbox) >= iou_thresh);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Step 1: drop detections scoring below `score_thresh`, then greedy NMS per class.
pub fn step1_nms(raw: &[Detection], iou_thresh: f64, score_thresh: f64) -> Vec<Detection> {
    let passing: Vec<Detection> = raw.iter().copied().filter(|d| d.score >= score_thresh).collect();
    greedy_suppress(&passing, iou_thresh, true)
}

/// Step 2: of any two boxes of any class overlapping at IOU ≥ `dedup_iou`,
/// the lower-priority one goes.
pub fn step2_cross_dedupe(dets: &[Detection], dedup_iou: f64) -> Vec<Detection> {
    greedy_suppress(dets, dedup_iou, false)
}

/// Step 3: model captions touching a mined caption take the mined geometry.
///
/// The best-IOU mined box wins. Mined boxes without a model counterpart are
/// not added. Captions that end up identical are merged keeping the higher score.
pub fn step3_adopt_mined_captions(dets: &[Detection], mined: &[BBox]) -> Vec<Detection> {
    let mut out: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in dets {
        let mut d = *d;
        if d.is_caption() && d.origin == Origin::Model {
            let best = mined
                .iter()
                .map(|m| (m, iou(m, &d.bbox)))
                .filter(|(_, v)| *v > 0.0)
                .max_by(|a, b| cmp_f64(a.1, b.1));
            if let Some((m, _)) = best {
                d.bbox = *m;
                d.origin = Origin::Mined;
            }
        }
        if d.is_caption() {
            if let Some(prev) = out.iter_mut().find(|p| p.is_caption() && p.bbox == d.bbox) {
                if d.score > prev.score {
                    *prev = d;
                }
                continue;
            }
        }
        out.push(d);
    }
    out
}

fn normalize_token(s: &str) -> String {
    s.chars().filter(|c| *c != '.').flat_map(char::to_lowercase).collect()
}

/// Case- and dot-insensitive fuzzy keyword test.
pub fn is_keyword(text: &str, keywords: &[String], max_edits: usize) -> bool {
    let t = normalize_token(text);
    !t.is_empty() && keywords.iter().any(|k| strsim::levenshtein(&t, &normalize_token(k)) <= max_edits)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| cmp_f64(*a, *b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn hull<'a>(boxes: impl IntoIterator<Item = &'a BBox>) -> Option<BBox> {
    boxes.into_iter().fold(None, |acc: Option<BBox>, b| Some(acc.map_or(*b, |a| a.expand_to_include(b))))
}

/// True when `w` has no word to its left on the same text line among `line_mates`.
fn starts_line(w: &Word, line_mates: &[&Word]) -> bool {
    let (_, cy) = w.bbox.center();
    !line_mates.iter().any(|o| {
        let (ox, oy) = o.bbox.center();
        ox < w.bbox.x0() && oy >= w.bbox.y0() && oy < w.bbox.y1() && cy >= o.bbox.y0() && cy < o.bbox.y1()
    })
}

/// Caption boxes found by blurring the word layout into text blocks and
/// keeping the blocks that contain a keyword at the start of a line.
///
/// Each box is the hull of the block's words from the keyword's row down.
pub fn heuristic_caption_boxes(page: &Page, cfg: &PipelineConfig) -> Vec<BBox> {
    if page.words.is_empty() || page.width_px == 0 || page.height_px == 0 {
        return Vec::new();
    }
    let sigma = median(page.words.iter().map(|w| w.bbox.height()).collect()).max(1.0);
    let cell = (sigma / 4.0).round().max(1.0);
    let gw = (page.width_px as f64 / cell).ceil() as u32;
    let gh = (page.height_px as f64 / cell).ceil() as u32;
    let mut mask = GrayImage::new(gw, gh);
    for w in &page.words {
        let x0 = (w.bbox.x0() / cell).floor() as u32;
        let y0 = (w.bbox.y0() / cell).floor() as u32;
        let x1 = ((w.bbox.x1() / cell).ceil() as u32).min(gw);
        let y1 = ((w.bbox.y1() / cell).ceil() as u32).min(gh);
        for y in y0..y1 {
            for x in x0..x1 {
                mask.put_pixel(x, y, Luma([255]));
            }
        }
    }
    let blurred = gaussian_blur_f32(&mask, (sigma / cell) as f32);
    let cut = (BLOB_THRESHOLD * 255.0).round() as u8;
    let blobs = GrayImage::from_fn(gw, gh, |x, y| Luma([if blurred.get_pixel(x, y)[0] > cut { 255 } else { 0 }]));

    let mut out: Vec<BBox> = Vec::new();
    for c in find_contours::<u32>(&blobs) {
        if c.border_type != BorderType::Outer {
            continue;
        }
        let gx0 = c.points.iter().map(|p| p.x).min().unwrap_or(0) as f64;
        let gy0 = c.points.iter().map(|p| p.y).min().unwrap_or(0) as f64;
        let gx1 = c.points.iter().map(|p| p.x).max().unwrap_or(0) as f64 + 1.0;
        let gy1 = c.points.iter().map(|p| p.y).max().unwrap_or(0) as f64 + 1.0;
        let Ok(blob) = BBox::new(gx0 * cell, gy0 * cell, gx1 * cell, gy1 * cell) else {
            continue;
        };
        let inside: Vec<&Word> = page
            .words
            .iter()
            .filter(|w| {
                let (cx, cy) = w.bbox.center();
                blob.contains_point(cx, cy)
            })
            .collect();
        let keyword = inside
            .iter()
            .filter(|w| is_keyword(&w.text, &cfg.keywords, cfg.fuzz_max_edits) && starts_line(w, &inside))
            .min_by(|a, b| cmp_f64(a.bbox.y0(), b.bbox.y0()).then(cmp_f64(a.bbox.x0(), b.bbox.x0())));
        let Some(kw) = keyword else { continue };
        let below = inside.iter().filter(|w| w.bbox.center().1 >= kw.bbox.y0()).map(|w| &w.bbox);
        if let Some(b) = hull(below) {
            if !out.contains(&b) {
                out.push(b);
            }
        }
    }
    out
}

/// Step 4: add heuristic captions, merging into overlapping model captions.
///
/// A merged caption keeps the heuristic top edge and the outermost of the
/// other three edges.
pub fn step4_heuristic_captions(dets: &[Detection], page: &Page, cfg: &PipelineConfig) -> Vec<Detection> {
    let mut out = dets.to_vec();
    for h in heuristic_caption_boxes(page, cfg) {
        let mut merged = false;
        for d in out.iter_mut().filter(|d| d.is_caption() && d.origin != Origin::Heuristic) {
            if d.bbox.overlaps(&h) {
                let y1 = d.bbox.y1().max(h.y1());
                if let Some(b) = d.bbox.with_edges(d.bbox.x0().min(h.x0()), h.y0(), d.bbox.x1().max(h.x1()), y1) {
                    d.bbox = b;
                }
                merged = true;
            }
        }
        if !merged {
            let mut d = Detection::new(h, DetClass::FigureCaption, cfg.heuristic_caption_score);
            d.origin = Origin::Heuristic;
            out.push(d);
        }
    }
    out
}

/// Step 5: grow each caption over word and paragraph boxes whose centers it
/// contains, until nothing changes or `max_iters` rounds have run.
pub fn step5_grow_captions(dets: &[Detection], page: &Page, max_iters: usize) -> Vec<Detection> {
    let sources: Vec<BBox> = page
        .words
        .iter()
        .map(|w| w.bbox)
        .chain(page.paragraphs().map(|r| r.bbox))
        .collect();
    dets.iter()
        .map(|d| {
            let mut d = *d;
            if !d.is_caption() {
                return d;
            }
            for _ in 0..max_iters {
                let grown = sources
                    .iter()
                    .filter(|s| {
                        let (cx, cy) = s.center();
                        d.bbox.contains_point(cx, cy)
                    })
                    .fold(d.bbox, |acc, s| acc.expand_to_include(s));
                if grown == d.bbox {
                    break;
                }
                d.bbox = grown;
            }
            d
        })
        .collect()
}

/// Step 6: figures absorb every rectangle candidate they overlap, repeatedly.
pub fn step6_merge_rects(dets: &[Detection], rects: &[RectCandidate]) -> Vec<Detection> {
    dets.iter()
        .map(|d| {
            let mut d = *d;
            if !d.is_figure() {
                return d;
            }
            loop {
                let grown = rects
                    .iter()
                    .filter(|r| r.bbox.overlaps(&d.bbox))
                    .fold(d.bbox, |acc, r| acc.expand_to_include(&r.bbox));
                if grown == d.bbox {
                    break d;
                }
                d.bbox = grown;
            }
        })
        .collect()
}

/// Step 7: drop captions covering more than `max_frac` of the page.
pub fn step7_drop_large_captions(dets: &[Detection], page: &Page, max_frac: f64) -> Vec<Detection> {
    let limit = max_frac * page.area();
    dets.iter().copied().filter(|d| !(d.is_caption() && d.bbox.area() > limit)).collect()
}

/// Midpoint of the figure edge that reads as "bottom" under the rotation.
pub fn bottom_midpoint(fig: &BBox, rotation: Rotation) -> (f64, f64) {
    let (cx, cy) = fig.center();
    match rotation {
        Rotation::Deg0 => (cx, fig.y1()),
        Rotation::Deg180 => (cx, fig.y0()),
        Rotation::Deg90 => (fig.x1(), cy),
        Rotation::Deg270 => (fig.x0(), cy),
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Step 8: greedy one-to-one pairing by ascending distance between caption
/// center and figure bottom midpoint. Figures may stay uncaptioned;
/// captions without a figure are dropped, as are other classes.
pub fn step8_pair(dets: &[Detection], page: &Page) -> Vec<PairedResult> {
    let figures: Vec<&Detection> = dets.iter().filter(|d| d.is_figure()).collect();
    let captions: Vec<&Detection> = dets.iter().filter(|d| d.is_caption()).collect();
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for (fi, f) in figures.iter().enumerate() {
        let bottom = bottom_midpoint(&f.bbox, page.rotation_deg);
        for (ci, c) in captions.iter().enumerate() {
            edges.push((dist(c.bbox.center(), bottom), fi, ci));
        }
    }
    edges.sort_by(|a, b| cmp_f64(a.0, b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut fig_cap: Vec<Option<usize>> = vec![None; figures.len()];
    let mut cap_used = vec![false; captions.len()];
    for (_, fi, ci) in edges {
        if fig_cap[fi].is_none() && !cap_used[ci] {
            fig_cap[fi] = Some(ci);
            cap_used[ci] = true;
        }
    }
    figures
        .iter()
        .zip(fig_cap)
        .map(|(f, c)| PairedResult {
            figure: **f,
            caption: c.map(|ci| *captions[ci]),
            page_id: page.source_id.clone(),
        })
        .collect()
}

/// Step 9: close any gap between figure bottom and caption top.
pub fn step9_extend_to_caption_top(pairs: &[PairedResult], rotation: Rotation) -> Vec<PairedResult> {
    pairs
        .iter()
        .map(|p| {
            let mut p = p.clone();
            if let Some(c) = &p.caption {
                let (f, c) = (p.figure.bbox, c.bbox);
                let [mut x0, mut y0, mut x1, mut y1] = f.coords();
                match rotation {
                    Rotation::Deg0 if c.y0() > y1 => y1 = c.y0(),
                    Rotation::Deg180 if c.y1() < y0 => y0 = c.y1(),
                    Rotation::Deg90 if c.x0() > x1 => x1 = c.x0(),
                    Rotation::Deg270 if c.x1() < x0 => x0 = c.x1(),
                    _ => {}
                }
                p.figure.bbox = f.with_edges(x0, y0, x1, y1).unwrap_or(f);
            }
            p
        })
        .collect()
}

/// Step 10: widen the figure to the caption's edges along the text direction.
pub fn step10_extend_horizontal(pairs: &[PairedResult], rotation: Rotation) -> Vec<PairedResult> {
    pairs
        .iter()
        .map(|p| {
            let mut p = p.clone();
            if let Some(c) = &p.caption {
                let (f, c) = (p.figure.bbox, c.bbox);
                let widened = match rotation {
                    Rotation::Deg0 | Rotation::Deg180 => f.with_edges(f.x0().min(c.x0()), f.y0(), f.x1().max(c.x1()), f.y1()),
                    Rotation::Deg90 | Rotation::Deg270 => f.with_edges(f.x0(), f.y0().min(c.y0()), f.x1(), f.y1().max(c.y1())),
                };
                p.figure.bbox = widened.unwrap_or(f);
            }
            p
        })
        .collect()
}

/// Detections after one step; `pairs` is filled from step 8 on, and then
/// `detections` lists each pair's figure followed by its caption.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSnapshot {
    pub step: u8,
    pub detections: Vec<Detection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<PairedResult>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub snapshots: Vec<StepSnapshot>,
}

impl PipelineRun {
    pub fn last(&self) -> &StepSnapshot {
        self.snapshots.last().expect("a run has at least one step")
    }

    /// Final pairs, or `None` when the run stopped before pairing.
    pub fn pairs(&self) -> Option<&[PairedResult]> {
        self.last().pairs.as_deref()
    }

    pub fn detections(&self) -> &[Detection] {
        &self.last().detections
    }
}

fn flatten(pairs: &[PairedResult]) -> Vec<Detection> {
    pairs.iter().flat_map(|p| std::iter::once(p.figure).chain(p.caption)).collect()
}

/// Every rectangle candidate as a certain figure; the raw input of the
/// heuristic-only pipeline.
pub fn heuristic_detections(rects: &[RectCandidate]) -> Vec<Detection> {
    rects
        .iter()
        .map(|r| Detection {
            bbox: r.bbox,
            cls: DetClass::Figure,
            score: 1.0,
            origin: Origin::Heuristic,
        })
        .collect()
}

/// Apply steps `1..=cfg.last_step`, recording the state after each one.
pub fn run_pipeline(raw: &[Detection], page: &Page, mined: &[BBox], rects: &[RectCandidate], cfg: &PipelineConfig) -> PipelineRun {
    let mut dets = raw.to_vec();
    canonical_sort(&mut dets);
    let mut mined = mined.to_vec();
    mined.sort_by(|a, b| a.coords().partial_cmp(&b.coords()).unwrap_or(std::cmp::Ordering::Equal));
    let rot = page.rotation_deg;
    let mut snapshots = Vec::new();
    let mut pairs: Vec<PairedResult> = Vec::new();
    for step in 1..=cfg.last_step.clamp(1, 10) {
        match step {
            1 => dets = step1_nms(&dets, cfg.nms_iou, cfg.score_thresh),
            2 => dets = step2_cross_dedupe(&dets, cfg.dedup_iou),
            3 => dets = step3_adopt_mined_captions(&dets, &mined),
            4 => dets = step4_heuristic_captions(&dets, page, cfg),
            5 => dets = step5_grow_captions(&dets, page, cfg.grow_max_iters),
            6 => dets = step6_merge_rects(&dets, rects),
            7 => dets = step7_drop_large_captions(&dets, page, cfg.caption_area_max_frac),
            8 => pairs = step8_pair(&dets, page),
            9 => pairs = step9_extend_to_caption_top(&pairs, rot),
            _ => pairs = step10_extend_horizontal(&pairs, rot),
        }
        if step >= 8 {
            dets = flatten(&pairs);
        }
        snapshots.push(StepSnapshot {
            step,
            detections: dets.clone(),
            pairs: (step >= 8).then(|| pairs.clone()),
        });
    }
    PipelineRun { snapshots }
}
