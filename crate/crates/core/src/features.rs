//! Feature channels for layout detection.
//!
//! Every channel is an 8-bit plane of a 512×512 stack. OCR-derived channels
//! keep 0 as a "true zero" for pixels that no word covers, so each word-level
//! value is mapped into a range that starts at 1 or higher.

use std::io::{Read, Write};
use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::hocr::{Page, RegionKind, Rotation, Word};

pub const STACK_SIZE: usize = 512;
pub const PLANE_LEN: usize = STACK_SIZE * STACK_SIZE;
pub const FSTK_MAGIC: &[u8; 5] = b"FSTK1";

pub const POS_CARDINALITY: u16 = 19;
pub const TAG_CARDINALITY: u16 = 57;
pub const DEP_CARDINALITY: u16 = 51;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("grayscale image is {image_w}x{image_h} but page is {page_w}x{page_h}")]
    DimensionMismatch {
        image_w: u32,
        image_h: u32,
        page_w: u32,
        page_h: u32,
    },
    #[error("tag provider returned {channel} id {id}, cardinality is {cardinality}")]
    ProviderCardinalityViolation {
        channel: ChannelId,
        id: u16,
        cardinality: u16,
    },
    #[error("tag provider returned {got} entries for {expected} words")]
    TagCountMismatch { expected: usize, got: usize },
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("channel {0} listed twice")]
    DuplicateChannel(ChannelId),
    #[error("bad feature stack container: {0}")]
    BadContainer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelId {
    Gs,
    Fs,
    Asc,
    Dec,
    Wc,
    PctNum,
    PctLet,
    Punct,
    TAng,
    SpPos,
    SpTag,
    SpDep,
    PB,
    CB,
}

impl ChannelId {
    pub const ALL: [ChannelId; 14] = [
        ChannelId::Gs,
        ChannelId::Fs,
        ChannelId::Asc,
        ChannelId::Dec,
        ChannelId::Wc,
        ChannelId::PctNum,
        ChannelId::PctLet,
        ChannelId::Punct,
        ChannelId::TAng,
        ChannelId::SpPos,
        ChannelId::SpTag,
        ChannelId::SpDep,
        ChannelId::PB,
        ChannelId::CB,
    ];

    /// Stable numeric id used in the FSTK manifest.
    pub fn id(self) -> u8 {
        ChannelId::ALL.iter().position(|c| *c == self).unwrap() as u8
    }

    pub fn from_id(id: u8) -> Option<ChannelId> {
        ChannelId::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelId::Gs => "gs",
            ChannelId::Fs => "fs",
            ChannelId::Asc => "asc",
            ChannelId::Dec => "dec",
            ChannelId::Wc => "wc",
            ChannelId::PctNum => "pct_num",
            ChannelId::PctLet => "pct_let",
            ChannelId::Punct => "punct",
            ChannelId::TAng => "t_ang",
            ChannelId::SpPos => "sp_pos",
            ChannelId::SpTag => "sp_tag",
            ChannelId::SpDep => "sp_dep",
            ChannelId::PB => "p_b",
            ChannelId::CB => "c_b",
        }
    }

    pub fn from_name(name: &str) -> Option<ChannelId> {
        ChannelId::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl std::fmt::Display for ChannelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered, duplicate-free selection of channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSet(Vec<ChannelId>);

impl ChannelSet {
    pub fn new(channels: Vec<ChannelId>) -> Result<Self, FeatureError> {
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(FeatureError::DuplicateChannel(*c));
            }
        }
        Ok(ChannelSet(channels))
    }

    /// The best-performing set: grayscale, typography, confidence, character
    /// classes, rotation and part of speech.
    pub fn m12() -> Self {
        use ChannelId::*;
        ChannelSet(vec![Gs, Asc, Dec, Wc, PctNum, PctLet, Punct, TAng, SpPos])
    }

    pub fn all() -> Self {
        ChannelSet(ChannelId::ALL.to_vec())
    }

    /// `"m12"`, `"all"`, or a comma-separated list of channel names.
    pub fn parse(spec: &str) -> Result<Self, FeatureError> {
        match spec.trim() {
            "m12" => Ok(ChannelSet::m12()),
            "all" => Ok(ChannelSet::all()),
            list => list
                .split(',')
                .map(|s| ChannelId::from_name(s.trim()).ok_or_else(|| FeatureError::UnknownChannel(s.trim().into())))
                .collect::<Result<Vec<_>, _>>()
                .and_then(ChannelSet::new),
        }
    }

    pub fn channels(&self) -> &[ChannelId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-word linguistic ids: part of speech (<19), fine tag (<57), dependency (<51).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordTags {
    pub pos: u16,
    pub tag: u16,
    pub dep: u16,
}

pub trait TagProvider {
    fn tag_words(&self, words: &[Word]) -> Vec<WordTags>;
}

/// Coarse hermetic tagger: noun-like, number-like or other.
///
/// POS ids follow `POS_LABELS`; tag ids reuse the three coarse classes and
/// every dependency is id 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct FallbackTagger;

pub const POS_LABELS: [&str; 19] = [
    "ADJ", "ADP", "ADV", "AUX", "CONJ", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN", "PUNCT",
    "SCONJ", "SYM", "VERB", "X", "SPACE",
];
const POS_NOUN: u16 = 8;
const POS_NUM: u16 = 9;
const POS_X: u16 = 17;

impl TagProvider for FallbackTagger {
    fn tag_words(&self, words: &[Word]) -> Vec<WordTags> {
        words
            .iter()
            .map(|w| {
                let letters = w.text.chars().filter(|c| c.is_alphabetic()).count();
                let digits = w.text.chars().filter(|c| c.is_numeric()).count();
                let (pos, tag) = if letters > 0 && letters >= digits {
                    (POS_NOUN, 0)
                } else if digits > 0 {
                    (POS_NUM, 1)
                } else {
                    (POS_X, 2)
                };
                WordTags { pos, tag, dep: 0 }
            })
            .collect()
    }
}

/// Tags loaded from a sidecar JSON array aligned with the page's word order.
#[derive(Debug, Clone, PartialEq)]
pub struct SidecarTags(pub Vec<WordTags>);

impl SidecarTags {
    pub fn from_json(s: &str) -> Result<Self, FeatureError> {
        Ok(SidecarTags(serde_json::from_str(s)?))
    }
}

impl TagProvider for SidecarTags {
    fn tag_words(&self, _words: &[Word]) -> Vec<WordTags> {
        self.0.clone()
    }
}

/// Map a z-like value already limited to [-5, 5] onto 1..=255 with 0 at 128.
fn signed_to_byte(v: f64) -> u8 {
    (128.0 + 127.0 * v.clamp(-5.0, 5.0) / 5.0).round() as u8
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Font size z-score per word (population standard deviation, median center).
/// Words beyond five deviations are ignored and stay 0.
pub fn normalize_fontsize(page: &Page) -> Vec<u8> {
    let sizes: Vec<f64> = page.words.iter().map(|w| w.fontsize).collect();
    if sizes.is_empty() {
        return Vec::new();
    }
    let n = sizes.len() as f64;
    let mean = sizes.iter().sum::<f64>() / n;
    let std = (sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    let med = median(&mut sizes.clone());
    sizes
        .iter()
        .map(|s| {
            if std == 0.0 {
                return 128;
            }
            let z = (s - med) / std;
            if z.abs() > 5.0 {
                0
            } else {
                signed_to_byte(z)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Typo {
    Ascenders,
    Descenders,
}

/// Ascender or descender offset from the page median, clipped to ±5 engine units.
pub fn normalize_typo(page: &Page, which: Typo) -> Vec<u8> {
    let values: Vec<f64> = page
        .words
        .iter()
        .map(|w| match which {
            Typo::Ascenders => w.ascenders,
            Typo::Descenders => w.descenders,
        })
        .collect();
    let med = median(&mut values.clone());
    values.iter().map(|v| signed_to_byte(v - med)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CharClassBytes {
    pub pct_let: u8,
    pub pct_num: u8,
    pub punct: u8,
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '\u{00A1}' | '\u{00BF}')
}

/// Letter and digit fractions scaled to 125..=255, plus the punctuation flag.
pub fn char_class_channels(word: &Word) -> CharClassBytes {
    let chars: Vec<char> = word.text.chars().filter(|c| !c.is_whitespace()).collect();
    if chars.is_empty() {
        return CharClassBytes { pct_let: 0, pct_num: 0, punct: 0 };
    }
    let n = chars.len() as f64;
    let frac = |pred: fn(&char) -> bool| chars.iter().filter(|c| pred(c)).count() as f64 / n;
    let scale = |f: f64| (125.0 + 130.0 * f).round() as u8;
    CharClassBytes {
        pct_let: scale(frac(|c| c.is_alphabetic())),
        pct_num: scale(frac(|c| c.is_numeric())),
        punct: if chars.iter().any(|c| is_punctuation(*c)) { 250 } else { 125 },
    }
}

/// Quarter-turn bins. 90° shares the 180° bin.
pub fn rotation_channel(rotation: Rotation) -> u8 {
    match rotation {
        Rotation::Deg0 => 85,
        Rotation::Deg90 | Rotation::Deg180 => 170,
        Rotation::Deg270 => 255,
    }
}

/// Percent confidence mapped onto 1..=255.
pub fn confidence_channel(confidence: f64) -> u8 {
    (1.0 + 254.0 * confidence.clamp(0.0, 100.0) / 100.0).round() as u8
}

fn id_to_byte(channel: ChannelId, id: u16, cardinality: u16) -> Result<u8, FeatureError> {
    if id >= cardinality {
        return Err(FeatureError::ProviderCardinalityViolation { channel, id, cardinality });
    }
    Ok((255.0 * (id as f64 + 1.0) / cardinality as f64).round() as u8)
}

/// Part-of-speech, tag and dependency bytes per word, `[pos, tag, dep]`.
pub fn linguistic_channels(page: &Page, provider: &dyn TagProvider) -> Result<Vec<[u8; 3]>, FeatureError> {
    let tags = provider.tag_words(&page.words);
    if tags.len() != page.words.len() {
        return Err(FeatureError::TagCountMismatch {
            expected: page.words.len(),
            got: tags.len(),
        });
    }
    tags.iter()
        .map(|t| {
            Ok([
                id_to_byte(ChannelId::SpPos, t.pos, POS_CARDINALITY)?,
                id_to_byte(ChannelId::SpTag, t.tag, TAG_CARDINALITY)?,
                id_to_byte(ChannelId::SpDep, t.dep, DEP_CARDINALITY)?,
            ])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureStack {
    pub source_id: String,
    pub channels: Vec<(ChannelId, Vec<u8>)>,
}

impl FeatureStack {
    pub fn plane(&self, id: ChannelId) -> Option<&[u8]> {
        self.channels.iter().find(|(c, _)| *c == id).map(|(_, p)| p.as_slice())
    }

    pub fn manifest(&self) -> Vec<ChannelId> {
        self.channels.iter().map(|(c, _)| *c).collect()
    }

    pub fn write_fstk<W: Write>(&self, mut out: W) -> Result<(), FeatureError> {
        out.write_all(FSTK_MAGIC)?;
        out.write_all(&(self.channels.len() as u16).to_le_bytes())?;
        for (id, _) in &self.channels {
            let mut name = [0u8; 16];
            let bytes = id.name().as_bytes();
            name[..bytes.len()].copy_from_slice(bytes);
            out.write_all(&[id.id()])?;
            out.write_all(&name)?;
        }
        for (_, plane) in &self.channels {
            out.write_all(plane)?;
        }
        Ok(())
    }

    pub fn to_fstk_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(7 + self.channels.len() * (17 + PLANE_LEN));
        self.write_fstk(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_fstk<R: Read>(mut input: R, source_id: &str) -> Result<FeatureStack, FeatureError> {
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic)?;
        if &magic != FSTK_MAGIC {
            return Err(FeatureError::BadContainer("bad magic".into()));
        }
        let mut count = [0u8; 2];
        input.read_exact(&mut count)?;
        let count = u16::from_le_bytes(count) as usize;
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let mut entry = [0u8; 17];
            input.read_exact(&mut entry)?;
            let id = ChannelId::from_id(entry[0])
                .ok_or_else(|| FeatureError::BadContainer(format!("unknown channel id {}", entry[0])))?;
            let name_end = entry[1..].iter().position(|b| *b == 0).unwrap_or(16);
            if &entry[1..1 + name_end] != id.name().as_bytes() {
                return Err(FeatureError::BadContainer(format!("name does not match channel id {}", entry[0])));
            }
            ids.push(id);
        }
        let mut channels = Vec::with_capacity(count);
        for id in ids {
            let mut plane = vec![0u8; PLANE_LEN];
            input.read_exact(&mut plane)?;
            channels.push((id, plane));
        }
        Ok(FeatureStack {
            source_id: source_id.to_string(),
            channels,
        })
    }

    /// One grayscale PNG per channel, named `<stem>.<channel>.png`.
    pub fn write_pngs(&self, dir: &Path, stem: &str) -> Result<(), FeatureError> {
        for (id, plane) in &self.channels {
            let img = GrayImage::from_raw(STACK_SIZE as u32, STACK_SIZE as u32, plane.clone())
                .expect("plane length is 512*512");
            img.save(dir.join(format!("{stem}.{}.png", id.name())))?;
        }
        Ok(())
    }
}

/// Area-weighted resampling of `src` (w×h) onto a 512×512 grid.
fn area_downsample(src: &GrayImage) -> Vec<f64> {
    let (w, h) = (src.width() as usize, src.height() as usize);
    let weights = |n_in: usize| -> Vec<Vec<(usize, f64)>> {
        let scale = n_in as f64 / STACK_SIZE as f64;
        (0..STACK_SIZE)
            .map(|o| {
                let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
                let first = lo.floor() as usize;
                let last = (hi.ceil() as usize).min(n_in);
                (first..last)
                    .filter_map(|i| {
                        let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                        (overlap > 0.0).then_some((i, overlap / scale))
                    })
                    .collect()
            })
            .collect()
    };
    let (wx, wy) = (weights(w), weights(h));
    let raw = src.as_raw();
    let mut rows = vec![0.0f64; h * STACK_SIZE];
    for y in 0..h {
        let line = &raw[y * w..(y + 1) * w];
        for (ox, ws) in wx.iter().enumerate() {
            rows[y * STACK_SIZE + ox] = ws.iter().map(|&(i, k)| line[i] as f64 * k).sum();
        }
    }
    let mut out = vec![0.0f64; PLANE_LEN];
    for (oy, ws) in wy.iter().enumerate() {
        for ox in 0..STACK_SIZE {
            out[oy * STACK_SIZE + ox] = ws.iter().map(|&(i, k)| rows[i * STACK_SIZE + ox] * k).sum();
        }
    }
    out
}

/// Stack-pixel span `[start, end)` for a page-pixel interval; at least one pixel wide.
fn stack_span(lo: f64, hi: f64, scale: f64) -> (usize, usize) {
    let start = ((lo * scale).round() as usize).min(STACK_SIZE - 1);
    let end = ((hi * scale).round() as usize).clamp(start + 1, STACK_SIZE);
    (start, end)
}

fn fill_max(plane: &mut [u8], bbox: &BBox, sx: f64, sy: f64, value: u8) {
    if value == 0 {
        return;
    }
    let (x0, x1) = stack_span(bbox.x0(), bbox.x1(), sx);
    let (y0, y1) = stack_span(bbox.y0(), bbox.y1(), sy);
    for y in y0..y1 {
        for px in &mut plane[y * STACK_SIZE + x0..y * STACK_SIZE + x1] {
            *px = (*px).max(value);
        }
    }
}

/// Render the selected channels of `page` into a 512×512 stack.
pub fn rasterize(
    page: &Page,
    grayscale: &GrayImage,
    channels: &ChannelSet,
    provider: &dyn TagProvider,
) -> Result<FeatureStack, FeatureError> {
    if grayscale.width() != page.width_px || grayscale.height() != page.height_px {
        return Err(FeatureError::DimensionMismatch {
            image_w: grayscale.width(),
            image_h: grayscale.height(),
            page_w: page.width_px,
            page_h: page.height_px,
        });
    }
    let sx = STACK_SIZE as f64 / page.width_px as f64;
    let sy = STACK_SIZE as f64 / page.height_px as f64;
    let needs_tags = channels
        .channels()
        .iter()
        .any(|c| matches!(c, ChannelId::SpPos | ChannelId::SpTag | ChannelId::SpDep));
    let tags = if needs_tags {
        linguistic_channels(page, provider)?
    } else {
        Vec::new()
    };
    if page.words.iter().any(|w| w.rotation == Rotation::Deg90)
        && channels.channels().contains(&ChannelId::TAng)
    {
        log::warn!("{}: 90 degree word rotation binned with 180", page.source_id);
    }

    let mut out = Vec::with_capacity(channels.len());
    for &channel in channels.channels() {
        let mut plane = vec![0u8; PLANE_LEN];
        let word_values: Option<Vec<u8>> = match channel {
            ChannelId::Gs => {
                for (dst, v) in plane.iter_mut().zip(area_downsample(grayscale)) {
                    *dst = 255 - v.round().clamp(0.0, 255.0) as u8;
                }
                None
            }
            ChannelId::PB | ChannelId::CB => {
                let kind = if channel == ChannelId::PB {
                    RegionKind::Paragraph
                } else {
                    RegionKind::Carea
                };
                for r in page.regions.iter().filter(|r| r.kind == kind) {
                    fill_max(&mut plane, &r.bbox, sx, sy, 255);
                }
                None
            }
            ChannelId::Fs => Some(normalize_fontsize(page)),
            ChannelId::Asc => Some(normalize_typo(page, Typo::Ascenders)),
            ChannelId::Dec => Some(normalize_typo(page, Typo::Descenders)),
            ChannelId::Wc => Some(page.words.iter().map(|w| confidence_channel(w.confidence)).collect()),
            ChannelId::PctNum => Some(page.words.iter().map(|w| char_class_channels(w).pct_num).collect()),
            ChannelId::PctLet => Some(page.words.iter().map(|w| char_class_channels(w).pct_let).collect()),
            ChannelId::Punct => Some(page.words.iter().map(|w| char_class_channels(w).punct).collect()),
            ChannelId::TAng => Some(page.words.iter().map(|w| rotation_channel(w.rotation)).collect()),
            ChannelId::SpPos => Some(tags.iter().map(|t| t[0]).collect()),
            ChannelId::SpTag => Some(tags.iter().map(|t| t[1]).collect()),
            ChannelId::SpDep => Some(tags.iter().map(|t| t[2]).collect()),
        };
        if let Some(values) = word_values {
            for (w, v) in page.words.iter().zip(values) {
                fill_max(&mut plane, &w.bbox, sx, sy, v);
            }
        }
        out.push((channel, plane));
    }
    Ok(FeatureStack {
        source_id: page.source_id.clone(),
        channels: out,
    })
}
