//! Detection metrics: one-to-one matching, precision/recall/F1, COCO AP and
//! the area-in-excess / area-lost cutoff analysis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{excess_lost, iou, BBox};
use crate::mining::decade_bin;
use crate::postprocess::{DetClass, Detection};

pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.1, 0.6, 0.8, 0.9];
pub const EXCESS_CUT: f64 = 0.10;
pub const LOST_CUT: f64 = 0.05;
/// Share of compliant pairs the cutoff must retain.
pub const CUTOFF_COVERAGE: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no matched pair satisfies both the excess and lost cuts")]
    NoCompliantPairs,
    #[error("bad ground truth at line {line}: {reason}")]
    BadTruth { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    #[serde(rename = "class")]
    pub cls: DetClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    TP,
    FP,
    FN,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchRecord {
    pub truth: Option<GroundTruth>,
    pub found: Option<Detection>,
    pub iou: f64,
    pub outcome: Outcome,
}

/// Maximum-cardinality one-to-one matching over pairs with IOU ≥ `thresh`.
///
/// Seeded greedily by descending IOU, then completed with augmenting paths,
/// so the count of matches is always the largest possible. Returns
/// `(truth_index, found_index, iou)` triples sorted by truth index.
pub fn match_indices(truths: &[BBox], founds: &[BBox], thresh: f64) -> Vec<(usize, usize, f64)> {
    let ious: Vec<Vec<f64>> = truths.iter().map(|t| founds.iter().map(|f| iou(t, f)).collect()).collect();
    let ok = |t: usize, f: usize| ious[t][f] > 0.0 && ious[t][f] >= thresh;
    let mut edges: Vec<(usize, usize)> = (0..truths.len())
        .flat_map(|t| (0..founds.len()).map(move |f| (t, f)))
        .filter(|&(t, f)| ok(t, f))
        .collect();
    edges.sort_by(|a, b| ious[b.0][b.1].total_cmp(&ious[a.0][a.1]).then(a.cmp(b)));

    let mut truth_of: Vec<Option<usize>> = vec![None; founds.len()];
    let mut found_of: Vec<Option<usize>> = vec![None; truths.len()];
    for (t, f) in edges {
        if found_of[t].is_none() && truth_of[f].is_none() {
            found_of[t] = Some(f);
            truth_of[f] = Some(t);
        }
    }

    fn augment(t: usize, ok: &dyn Fn(usize, usize) -> bool, nf: usize, seen: &mut [bool], truth_of: &mut [Option<usize>], found_of: &mut [Option<usize>]) -> bool {
        for f in 0..nf {
            if !ok(t, f) || seen[f] {
                continue;
            }
            seen[f] = true;
            if truth_of[f].is_none_or(|t2| augment(t2, ok, nf, seen, truth_of, found_of)) {
                truth_of[f] = Some(t);
                found_of[t] = Some(f);
                return true;
            }
        }
        false
    }
    for t in 0..truths.len() {
        if found_of[t].is_none() {
            let mut seen = vec![false; founds.len()];
            augment(t, &ok, founds.len(), &mut seen, &mut truth_of, &mut found_of);
        }
    }
    found_of
        .iter()
        .enumerate()
        .filter_map(|(t, f)| f.map(|f| (t, f, ious[t][f])))
        .collect()
}

/// TP for matched pairs, FP for leftover founds, FN for leftover truths.
///
/// Callers pass a single page and class.
pub fn match_boxes(truths: &[GroundTruth], founds: &[Detection], thresh: f64) -> Vec<MatchRecord> {
    let tb: Vec<BBox> = truths.iter().map(|t| t.bbox).collect();
    let fb: Vec<BBox> = founds.iter().map(|f| f.bbox).collect();
    let pairs = match_indices(&tb, &fb, thresh);
    let mut used_f = vec![false; founds.len()];
    let mut used_t = vec![false; truths.len()];
    let mut out = Vec::new();
    for &(t, f, v) in &pairs {
        used_t[t] = true;
        used_f[f] = true;
        out.push(MatchRecord {
            truth: Some(truths[t]),
            found: Some(founds[f]),
            iou: v,
            outcome: Outcome::TP,
        });
    }
    for (_, d) in founds.iter().enumerate().filter(|(f, _)| !used_f[*f]) {
        out.push(MatchRecord {
            truth: None,
            found: Some(*d),
            iou: 0.0,
            outcome: Outcome::FP,
        });
    }
    for (_, g) in truths.iter().enumerate().filter(|(t, _)| !used_t[*t]) {
        out.push(MatchRecord {
            truth: Some(*g),
            found: None,
            iou: 0.0,
            outcome: Outcome::FN,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn from_records(records: &[MatchRecord]) -> Counts {
        let mut c = Counts::default();
        for r in records {
            match r.outcome {
                Outcome::TP => c.tp += 1,
                Outcome::FP => c.fp += 1,
                Outcome::FN => c.fn_ += 1,
            }
        }
        c
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// A denominator was zero and a convention filled the value in.
    pub degenerate: bool,
}

/// Precision, recall and F1. With nothing found, precision is 1 when nothing
/// was missed either, else 0; recall mirrors this with nothing to find.
pub fn prf(c: Counts) -> Prf {
    let ratio = |num: usize, den: usize, other_err: usize| {
        if den == 0 {
            if other_err == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp, c.fn_);
    let recall = ratio(c.tp, c.tp + c.fn_, c.fp);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
        degenerate: c.tp + c.fp == 0 || c.tp + c.fn_ == 0,
    }
}

/// One page's truths and scored founds for a single class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ApPage {
    pub truths: Vec<BBox>,
    pub founds: Vec<(BBox, f64)>,
}

fn ap_at(pages: &[ApPage], thresh: f64, n_truth: usize) -> f64 {
    let mut ranked: Vec<(usize, usize)> = pages
        .iter()
        .enumerate()
        .flat_map(|(p, pg)| (0..pg.founds.len()).map(move |f| (p, f)))
        .collect();
    ranked.sort_by(|a, b| pages[b.0].founds[b.1].1.total_cmp(&pages[a.0].founds[a.1].1).then(a.cmp(b)));
    let mut taken: Vec<Vec<bool>> = pages.iter().map(|p| vec![false; p.truths.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prec = Vec::with_capacity(ranked.len());
    let mut rec = Vec::with_capacity(ranked.len());
    for (p, f) in ranked {
        let fb = &pages[p].founds[f].0;
        let best = pages[p]
            .truths
            .iter()
            .enumerate()
            .filter(|(t, _)| !taken[p][*t])
            .map(|(t, tb)| (t, iou(tb, fb)))
            .filter(|(_, v)| *v >= thresh)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((t, _)) => {
                taken[p][t] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        prec.push(tp as f64 / (tp + fp) as f64);
        rec.push(tp as f64 / n_truth as f64);
    }
    for i in (0..prec.len().saturating_sub(1)).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let total: f64 = (0..=100)
        .map(|k| {
            let r = k as f64 / 100.0;
            rec.iter().position(|x| *x >= r).map_or(0.0, |i| prec[i])
        })
        .sum();
    total / 101.0
}

/// COCO-style AP averaged over IOU thresholds 0.50, 0.55, …, 0.95 with
/// 101-point interpolated precision. `None` when there is nothing to find.
pub fn coco_ap(pages: &[ApPage]) -> Option<f64> {
    let n_truth: usize = pages.iter().map(|p| p.truths.len()).sum();
    if n_truth == 0 {
        return None;
    }
    let sum: f64 = (0..10).map(|i| ap_at(pages, (50 + 5 * i) as f64 / 100.0, n_truth)).sum();
    Some(sum / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffMode {
    /// Largest IOU that at least 90% of compliant pairs reach.
    #[default]
    CompliantPercentile,
    /// Smallest IOU above which at least 90% of all pairs are compliant.
    ComplianceThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairMetrics {
    pub iou: f64,
    pub excess_frac: f64,
    pub lost_frac: f64,
    pub compliant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffAnalysis {
    pub mode: CutoffMode,
    pub cutoff: f64,
    pub compliant: usize,
    pub pairs: Vec<PairMetrics>,
}

/// Per-pair IOU and area fractions over matched `(truth, found)` pairs and
/// the IOU cutoff implied by the 10% excess / 5% lost cuts.
pub fn excess_lost_analysis(pairs: &[(BBox, BBox)], mode: CutoffMode) -> Result<CutoffAnalysis, EvalError> {
    let metrics: Vec<PairMetrics> = pairs
        .iter()
        .map(|(t, f)| {
            let a = excess_lost(t, f);
            PairMetrics {
                iou: a.iou,
                excess_frac: a.excess_frac,
                lost_frac: a.lost_frac,
                compliant: a.excess_frac <= EXCESS_CUT && a.lost_frac <= LOST_CUT,
            }
        })
        .collect();
    let mut ok: Vec<f64> = metrics.iter().filter(|m| m.compliant).map(|m| m.iou).collect();
    if ok.is_empty() {
        return Err(EvalError::NoCompliantPairs);
    }
    ok.sort_by(f64::total_cmp);
    let cutoff = match mode {
        CutoffMode::CompliantPercentile => {
            let n = ok.len();
            ok[n - (CUTOFF_COVERAGE * n as f64).ceil() as usize]
        }
        CutoffMode::ComplianceThreshold => {
            let mut all: Vec<(f64, bool)> = metrics.iter().map(|m| (m.iou, m.compliant)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0));
            // Scan candidate cutoffs upwards; the suffix from i holds every pair with IOU ≥ all[i].
            let mut compliant_suffix = vec![0usize; all.len() + 1];
            for i in (0..all.len()).rev() {
                compliant_suffix[i] = compliant_suffix[i + 1] + all[i].1 as usize;
            }
            (0..all.len())
                .filter(|&i| i == 0 || all[i].0 > all[i - 1].0)
                .find(|&i| compliant_suffix[i] as f64 >= CUTOFF_COVERAGE * (all.len() - i) as f64)
                .map(|i| all[i].0)
                .expect("the top-IOU group contains a compliant pair")
        }
    };
    Ok(CutoffAnalysis {
        mode,
        cutoff,
        compliant: ok.len(),
        pairs: metrics,
    })
}

/// Everything known about one page for evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PageEval {
    pub page_id: String,
    pub year: Option<i32>,
    pub truths: Vec<GroundTruth>,
    pub founds: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub class: String,
    pub iou_thresh: f64,
    pub decade: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

impl MetricRow {
    fn new(class: DetClass, iou_thresh: f64, decade: &str, c: Counts) -> Self {
        let p = prf(c);
        MetricRow {
            class: class.name().to_string(),
            iou_thresh,
            decade: decade.to_string(),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            degenerate: p.degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub pages: usize,
    /// Corpus-wide rows; `decade` is "all".
    pub metrics: Vec<MetricRow>,
    pub coco_ap: BTreeMap<String, Option<f64>>,
    /// Per-decade rows, present when any page has a year.
    pub decades: Vec<MetricRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excess_lost: Option<CutoffAnalysis>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

fn page_counts(page: &PageEval, cls: DetClass, thresh: f64) -> Counts {
    let t: Vec<GroundTruth> = page.truths.iter().copied().filter(|t| t.cls == cls).collect();
    let f: Vec<Detection> = page.founds.iter().copied().filter(|f| f.cls == cls).collect();
    Counts::from_records(&match_boxes(&t, &f, thresh))
}

/// Aggregate per class and threshold, per decade when years are known, and
/// optionally run the cutoff analysis over every pair matched at any overlap.
pub fn report(pages: &[PageEval], thresholds: &[f64], cutoff: Option<CutoffMode>) -> Result<EvalReport, EvalError> {
    let classes: Vec<DetClass> = DetClass::ALL
        .into_iter()
        .filter(|c| pages.iter().any(|p| p.truths.iter().any(|t| t.cls == *c) || p.founds.iter().any(|f| f.cls == *c)))
        .collect();
    let with_years = pages.iter().any(|p| p.year.is_some());
    let mut metrics = Vec::new();
    let mut decades = Vec::new();
    let mut coco = BTreeMap::new();
    for &cls in &classes {
        for &th in thresholds {
            let per_page: Vec<Counts> = pages.iter().map(|p| page_counts(p, cls, th)).collect();
            let total = per_page.iter().fold(Counts::default(), |a, c| a + *c);
            metrics.push(MetricRow::new(cls, th, "all", total));
            if with_years {
                let mut bins: BTreeMap<String, Counts> = BTreeMap::new();
                for (p, c) in pages.iter().zip(&per_page) {
                    let e = bins.entry(decade_bin(p.year)).or_default();
                    *e = *e + *c;
                }
                decades.extend(bins.into_iter().map(|(d, c)| MetricRow::new(cls, th, &d, c)));
            }
        }
        let ap_pages: Vec<ApPage> = pages
            .iter()
            .map(|p| ApPage {
                truths: p.truths.iter().filter(|t| t.cls == cls).map(|t| t.bbox).collect(),
                founds: p.founds.iter().filter(|f| f.cls == cls).map(|f| (f.bbox, f.score)).collect(),
            })
            .collect();
        coco.insert(cls.name().to_string(), coco_ap(&ap_pages));
    }
    let excess_lost = match cutoff {
        None => None,
        Some(mode) => {
            let mut pairs = Vec::new();
            for p in pages {
                for &cls in &classes {
                    let t: Vec<GroundTruth> = p.truths.iter().copied().filter(|t| t.cls == cls).collect();
                    let f: Vec<Detection> = p.founds.iter().copied().filter(|f| f.cls == cls).collect();
                    for r in match_boxes(&t, &f, f64::MIN_POSITIVE) {
                        if let (Some(t), Some(f)) = (r.truth, r.found) {
                            pairs.push((t.bbox, f.bbox));
                        }
                    }
                }
            }
            Some(excess_lost_analysis(&pairs, mode)?)
        }
    };
    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        pages: pages.len(),
        metrics,
        coco_ap: coco,
        decades,
        excess_lost,
    })
}

/// Normalized-text truth: one `class cx cy w h` line per object, with
/// coordinates as fractions of the page size.
pub fn parse_yolo_truth(text: &str, page_w: u32, page_h: u32) -> Result<Vec<GroundTruth>, EvalError> {
    let (w, h) = (page_w as f64, page_h as f64);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |reason: String| EvalError::BadTruth { line: i + 1, reason };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", fields.len())));
        }
        let cls = fields[0]
            .parse::<usize>()
            .ok()
            .and_then(DetClass::from_index)
            .ok_or_else(|| bad(format!("unknown class {:?}", fields[0])))?;
        let v: Vec<f64> = fields[1..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<_, _>>()?;
        let (cx, cy, bw, bh) = (v[0] * w, v[1] * h, v[2] * w, v[3] * h);
        let bbox = BBox::new(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0)
            .ok()
            .or_else(|| BBox::new((cx - bw / 2.0).max(0.0), (cy - bh / 2.0).max(0.0), cx + bw / 2.0, cy + bh / 2.0).ok())
            .and_then(|b| b.clamp_to(w, h))
            .ok_or_else(|| bad("box is empty within the page".into()))?;
        out.push(GroundTruth { bbox, cls });
    }
    Ok(out)
}

/// Box-list truth: `[{"bbox": [x0, y0, x1, y1], "class": "figure"}, …]` in page pixels.
pub fn parse_box_list_truth(json: &str) -> Result<Vec<GroundTruth>, EvalError> {
    serde_json::from_str(json).map_err(|e| EvalError::BadTruth {
        line: e.line(),
        reason: e.to_string(),
    })
}
