//! hOCR ingestion.
//!
//! Reads the XHTML produced by an OCR engine (Tesseract's `hocr` renderer in
//! practice) into a [`Page`]: words with their engine metrics, paragraph and
//! content-area regions, and a page orientation. Coordinates stay in the
//! raster's native pixel frame.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

pub const DEFAULT_DPI: u32 = 300;

#[derive(Debug, Error)]
pub enum HocrError {
    #[error("malformed hOCR document: {0}")]
    MalformedDocument(String),
    #[error("no ocr_page element found")]
    MissingPageElement,
}

/// Quarter-turn orientation, counter-clockwise, as reported by `textangle`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub enum Rotation {
    #[default]
    Deg0,
    Deg90,
    Deg180,
    Deg270,
}

impl Rotation {
    pub fn degrees(self) -> u16 {
        match self {
            Rotation::Deg0 => 0,
            Rotation::Deg90 => 90,
            Rotation::Deg180 => 180,
            Rotation::Deg270 => 270,
        }
    }

    /// Nearest quarter turn for an arbitrary angle in degrees.
    pub fn nearest(angle: f64) -> Rotation {
        let quarter = (angle.rem_euclid(360.0) / 90.0).round() as i64 % 4;
        match quarter {
            0 => Rotation::Deg0,
            1 => Rotation::Deg90,
            2 => Rotation::Deg180,
            _ => Rotation::Deg270,
        }
    }
}

impl TryFrom<u16> for Rotation {
    type Error = String;

    fn try_from(v: u16) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Rotation::Deg0),
            90 => Ok(Rotation::Deg90),
            180 => Ok(Rotation::Deg180),
            270 => Ok(Rotation::Deg270),
            other => Err(format!("rotation must be 0, 90, 180 or 270, got {other}")),
        }
    }
}

impl From<Rotation> for u16 {
    fn from(r: Rotation) -> u16 {
        r.degrees()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    #[serde(rename = "bbox")]
    pub bbox: BBox,
    pub text: String,
    /// Percent confidence, 0 to 100.
    #[serde(rename = "conf")]
    pub confidence: f64,
    pub fontsize: f64,
    #[serde(rename = "asc")]
    pub ascenders: f64,
    #[serde(rename = "desc")]
    pub descenders: f64,
    #[serde(rename = "angle")]
    pub rotation: Rotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Paragraph,
    Carea,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bbox: BBox,
    pub kind: RegionKind,
}

fn default_dpi() -> u32 {
    DEFAULT_DPI
}

/// One OCR'd page. Serializes to the canonical page JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub source_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub rotation_deg: Rotation,
    pub words: Vec<Word>,
    pub regions: Vec<Region>,
    #[serde(default = "default_dpi")]
    pub dpi_effective: u32,
}

impl Page {
    pub fn area(&self) -> f64 {
        self.width_px as f64 * self.height_px as f64
    }

    pub fn paragraphs(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter().filter(|r| r.kind == RegionKind::Paragraph)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("page serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Page, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Non-fatal findings from [`parse_hocr_with_report`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseReport {
    /// `ocrx_word` elements dropped for a missing or unusable bbox.
    pub dropped_words: usize,
    /// Indices (into `Page::words`) of words lacking one of x_size,
    /// x_ascenders or x_descenders; the missing values were set to 0.
    pub missing_metrics: Vec<usize>,
    /// Words whose confidence fell outside 0..=100 and was clamped.
    pub clamped_confidence: usize,
    /// Additional ocr_page elements beyond the first, which are ignored.
    pub extra_pages: usize,
}

impl ParseReport {
    pub fn warning_count(&self) -> usize {
        self.dropped_words + self.missing_metrics.len() + self.clamped_confidence + self.extra_pages
    }
}

/// Properties from an hOCR `title` attribute, e.g. `bbox 1 2 3 4; x_wconf 93`.
#[derive(Debug, Default)]
struct Title<'a> {
    props: BTreeMap<&'a str, &'a str>,
}

impl<'a> Title<'a> {
    fn parse(raw: &'a str) -> Self {
        let props = raw
            .split(';')
            .filter_map(|part| {
                let part = part.trim();
                let (key, rest) = part.split_once(char::is_whitespace).unwrap_or((part, ""));
                (!key.is_empty()).then(|| (key, rest.trim()))
            })
            .collect();
        Title { props }
    }

    fn get(&self, key: &str) -> Option<&'a str> {
        self.props.get(key).copied()
    }

    fn number(&self, key: &str) -> Option<f64> {
        self.get(key)?.split_whitespace().next()?.parse().ok()
    }

    fn bbox(&self) -> Option<[f64; 4]> {
        let vals: Vec<f64> = self
            .get("bbox")?
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .ok()?;
        <[f64; 4]>::try_from(vals).ok()
    }
}

fn has_class(node: &roxmltree::Node, class: &str) -> bool {
    node.attribute("class")
        .is_some_and(|c| c.split_whitespace().any(|t| t == class))
}

fn title_of<'a>(node: &roxmltree::Node<'a, 'a>) -> Title<'a> {
    node.attribute("title").map(Title::parse).unwrap_or_default()
}

/// Walks from `node` up to (and including) `stop`, returning the first value of `key`.
fn inherited_number(node: roxmltree::Node, stop: roxmltree::NodeId, key: &str) -> Option<f64> {
    for anc in node.ancestors() {
        if let Some(v) = title_of(&anc).number(key) {
            return Some(v);
        }
        if anc.id() == stop {
            break;
        }
    }
    None
}

pub fn parse_hocr(document: &[u8], source_id: &str) -> Result<Page, HocrError> {
    parse_hocr_with_report(document, source_id).map(|(page, _)| page)
}

pub fn parse_hocr_with_report(document: &[u8], source_id: &str) -> Result<(Page, ParseReport), HocrError> {
    let text = std::str::from_utf8(document).map_err(|e| HocrError::MalformedDocument(e.to_string()))?;
    let opts = roxmltree::ParsingOptions {
        allow_dtd: true,
        ..Default::default()
    };
    let doc = roxmltree::Document::parse_with_options(text, opts)
        .map_err(|e| HocrError::MalformedDocument(e.to_string()))?;

    let mut pages = doc.descendants().filter(|n| n.is_element() && has_class(n, "ocr_page"));
    let page_node = pages.next().ok_or(HocrError::MissingPageElement)?;
    let mut report = ParseReport {
        extra_pages: pages.count(),
        ..Default::default()
    };

    let page_title = title_of(&page_node);
    let [px0, py0, px1, py1] = page_title
        .bbox()
        .ok_or_else(|| HocrError::MalformedDocument("ocr_page has no bbox".into()))?;
    let (width, height) = (px1 - px0, py1 - py0);
    if !(width >= 1.0 && height >= 1.0) {
        return Err(HocrError::MalformedDocument(format!("ocr_page bbox has no extent: {width}x{height}")));
    }
    let (width_px, height_px) = (width.round() as u32, height.round() as u32);

    let clamp_box = |c: [f64; 4]| {
        BBox::new(c[0].max(0.0), c[1].max(0.0), c[2].max(0.0), c[3].max(0.0))
            .ok()
            .and_then(|b| b.clamp_to(width_px as f64, height_px as f64))
    };

    let mut words = Vec::new();
    let mut regions = Vec::new();
    for node in page_node.descendants().filter(|n| n.is_element()) {
        let kind = if has_class(&node, "ocr_par") {
            Some(RegionKind::Paragraph)
        } else if has_class(&node, "ocr_carea") {
            Some(RegionKind::Carea)
        } else {
            None
        };
        if let Some(kind) = kind {
            if let Some(bbox) = title_of(&node).bbox().and_then(clamp_box) {
                regions.push(Region { bbox, kind });
            }
            continue;
        }
        if !has_class(&node, "ocrx_word") {
            continue;
        }
        let title = title_of(&node);
        let Some(bbox) = title.bbox().and_then(clamp_box) else {
            report.dropped_words += 1;
            continue;
        };
        let raw_conf = title.number("x_wconf").unwrap_or(0.0);
        let confidence = raw_conf.clamp(0.0, 100.0);
        if confidence != raw_conf {
            report.clamped_confidence += 1;
        }
        // Tesseract writes font metrics on the enclosing ocr_line; the word
        // inherits them unless it carries its own.
        let stop = page_node.id();
        let fontsize = inherited_number(node, stop, "x_size").or_else(|| title.number("x_fsize"));
        let ascenders = inherited_number(node, stop, "x_ascenders");
        let descenders = inherited_number(node, stop, "x_descenders");
        if fontsize.is_none() || ascenders.is_none() || descenders.is_none() {
            report.missing_metrics.push(words.len());
        }
        let rotation = inherited_number(node, stop, "textangle")
            .map(Rotation::nearest)
            .unwrap_or_default();
        let text: String = node
            .descendants()
            .filter(|n| n.is_text())
            .filter_map(|n| n.text())
            .collect::<String>()
            .trim()
            .to_string();
        words.push(Word {
            bbox,
            text,
            confidence,
            fontsize: fontsize.unwrap_or(0.0).max(0.0),
            ascenders: ascenders.unwrap_or(0.0),
            descenders: descenders.unwrap_or(0.0),
            rotation,
        });
    }

    let rotation_deg = page_title
        .number("textangle")
        .map(Rotation::nearest)
        .unwrap_or_else(|| modal_rotation(&words));

    let page = Page {
        source_id: source_id.to_string(),
        width_px,
        height_px,
        rotation_deg,
        words,
        regions,
        dpi_effective: DEFAULT_DPI,
    };
    Ok((page, report))
}

/// Most common word rotation; ties go to the smaller angle, no words to 0.
pub fn modal_rotation(words: &[Word]) -> Rotation {
    let mut counts: BTreeMap<Rotation, usize> = BTreeMap::new();
    for w in words {
        *counts.entry(w.rotation).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(r, _)| r)
        .unwrap_or_default()
}

/// Grow a hand annotation to cover every OCR word whose center it contains.
pub fn snap_annotation_to_words(ann: &BBox, page: &Page) -> BBox {
    page.words
        .iter()
        .filter(|w| {
            let (cx, cy) = w.bbox.center();
            ann.contains_point(cx, cy)
        })
        .fold(*ann, |acc, w| acc.expand_to_include(&w.bbox))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tests::b;

    fn wrap(body: &str) -> String {
        format!(
            r#"<?xml version="1.0" encoding="UTF-8"?>
<!DOCTYPE html PUBLIC "-//W3C//DTD XHTML 1.0 Transitional//EN"
    "http://www.w3.org/TR/xhtml1/DTD/xhtml1-transitional.dtd">
<html xmlns="http://www.w3.org/1999/xhtml" xml:lang="en" lang="en">
 <head><title></title><meta name='ocr-system' content='tesseract 5.3.0' /></head>
 <body>{body}</body>
</html>"#
        )
    }

    #[test]
    fn single_word() {
        let doc = wrap(
            r#"<div class='ocr_page' id='page_1' title='image "p.tif"; bbox 0 0 2550 3300; ppageno 0'>
  <span class='ocrx_word' id='word_1_1' title='bbox 10 20 110 45; x_wconf 93'>Figure</span>
</div>"#,
        );
        let (page, report) = parse_hocr_with_report(doc.as_bytes(), "p1").unwrap();
        assert_eq!(page.words.len(), 1);
        let w = &page.words[0];
        assert_eq!(w.bbox, b(10., 20., 110., 45.));
        assert_eq!(w.confidence, 93.0);
        assert_eq!(w.text, "Figure");
        assert_eq!(w.fontsize, 0.0);
        assert_eq!(report.missing_metrics, vec![0]);
    }

    #[test]
    fn textangle_and_line_metrics_are_inherited() {
        let doc = wrap(
            r#"<div class='ocr_page' title='bbox 0 0 1000 1000'>
 <div class='ocr_carea' title='bbox 5 5 500 200'>
  <p class='ocr_par' title='bbox 10 10 400 100'>
   <span class='ocr_line' title='bbox 10 10 400 40; baseline 0 -5; x_size 30; x_descenders 6; x_ascenders 7; textangle 180'>
    <span class='ocrx_word' title='bbox 10 10 100 40; x_wconf 88'><strong>Plate</strong></span>
    <span class='ocrx_word' title='x_wconf 88'>lost</span>
    <span class='ocrx_word' title='bbox 120 10 200 40; x_wconf 140; x_size 12'>3.</span>
   </span>
  </p>
 </div>
</div>"#,
        );
        let (page, report) = parse_hocr_with_report(doc.as_bytes(), "p").unwrap();
        assert_eq!(page.words.len(), 2);
        assert_eq!(report.dropped_words, 1);
        assert_eq!(report.clamped_confidence, 1);
        assert!(report.missing_metrics.is_empty());
        assert_eq!(page.words[0].rotation, Rotation::Deg180);
        assert_eq!(page.words[0].text, "Plate");
        assert_eq!((page.words[0].fontsize, page.words[0].ascenders, page.words[0].descenders), (30., 7., 6.));
        assert_eq!(page.words[1].fontsize, 12.0);
        assert_eq!(page.words[1].confidence, 100.0);
        assert_eq!(page.rotation_deg, Rotation::Deg180);
        assert_eq!(page.regions.len(), 2);
        assert_eq!(page.paragraphs().count(), 1);
    }

    #[test]
    fn empty_page() {
        let doc = wrap("<div class='ocr_page' title='bbox 0 0 5100 6600'></div>");
        let page = parse_hocr(doc.as_bytes(), "e").unwrap();
        assert_eq!((page.width_px, page.height_px), (5100, 6600));
        assert!(page.words.is_empty());
        assert_eq!(page.rotation_deg, Rotation::Deg0);
    }

    #[test]
    fn page_osd_overrides_word_majority() {
        let doc = wrap(
            r#"<div class='ocr_page' title='bbox 0 0 100 100; textangle 90'>
  <span class='ocrx_word' title='bbox 1 1 5 5; x_wconf 50'>a</span></div>"#,
        );
        assert_eq!(parse_hocr(doc.as_bytes(), "").unwrap().rotation_deg, Rotation::Deg90);
    }

    #[test]
    fn errors_are_typed() {
        assert!(matches!(
            parse_hocr(b"<html><body><div class='ocr_page'", ""),
            Err(HocrError::MalformedDocument(_))
        ));
        assert!(matches!(
            parse_hocr(wrap("<p>nothing</p>").as_bytes(), ""),
            Err(HocrError::MissingPageElement)
        ));
        assert!(matches!(
            parse_hocr(wrap("<div class='ocr_page'></div>").as_bytes(), ""),
            Err(HocrError::MalformedDocument(_))
        ));
    }

    #[test]
    fn words_clamped_to_page() {
        let doc = wrap(
            r#"<div class='ocr_page' title='bbox 0 0 100 100'>
  <span class='ocrx_word' title='bbox 90 90 130 120; x_wconf 50'>edge</span>
  <span class='ocrx_word' title='bbox 120 120 130 130; x_wconf 50'>off</span></div>"#,
        );
        let (page, report) = parse_hocr_with_report(doc.as_bytes(), "").unwrap();
        assert_eq!(page.words[0].bbox, b(90., 90., 100., 100.));
        assert_eq!(report.dropped_words, 1);
    }

    fn page_with(words: &[BBox]) -> Page {
        Page {
            source_id: "s".into(),
            width_px: 1000,
            height_px: 1000,
            rotation_deg: Rotation::Deg0,
            words: words
                .iter()
                .map(|bb| Word {
                    bbox: *bb,
                    text: "w".into(),
                    confidence: 90.,
                    fontsize: 10.,
                    ascenders: 1.,
                    descenders: 1.,
                    rotation: Rotation::Deg0,
                })
                .collect(),
            regions: vec![],
            dpi_effective: DEFAULT_DPI,
        }
    }

    #[test]
    fn snap_examples() {
        let words = [b(100., 100., 150., 120.), b(160., 100., 200., 120.), b(210., 100., 260., 120.)];
        let page = page_with(&words);
        let exact = b(100., 100., 260., 120.);
        assert_eq!(snap_annotation_to_words(&exact, &page), exact);

        // Clips the last word by 2 px on the right and 1 px at the bottom.
        let clipped = b(98., 99., 258., 119.);
        assert_eq!(snap_annotation_to_words(&clipped, &page), b(98., 99., 260., 120.));

        let empty = b(500., 500., 600., 600.);
        assert_eq!(snap_annotation_to_words(&empty, &page), empty);
    }

    #[test]
    fn canonical_json_field_order() {
        let page = page_with(&[b(1., 2., 3., 4.)]);
        let json = page.to_json();
        let keys = ["\"source_id\"", "\"width_px\"", "\"height_px\"", "\"rotation_deg\"", "\"words\"", "\"regions\""];
        let pos: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{json}");
        assert!(json.contains(r#"{"bbox":[1.0,2.0,3.0,4.0],"text":"w","conf":90.0,"fontsize":10.0,"asc":1.0,"desc":1.0,"angle":0}"#));
        assert_eq!(Page::from_json(&json).unwrap(), page);
    }
}
