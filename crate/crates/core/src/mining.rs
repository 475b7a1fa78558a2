//! PDF-miner output ingestion and corpus parsability estimates.
//!
//! An article counts as parsable for a kind of object (figures or tables)
//! when the numbers the miner returned for that kind, read either as whole
//! numbers or as roman numerals, are exactly `1..=N` for the `N` objects
//! found. The two numbering schemes are never mixed within one kind.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MiningError {
    #[error("not a strict roman numeral: {0:?}")]
    NotRoman(String),
    #[error("miner JSON does not match the figure-list schema: {0}")]
    SchemaError(String),
}

/// Value of a canonical uppercase roman numeral in 1..=3999.
///
/// Non-canonical spellings ("IIII", "IC", "VX") are rejected.
pub fn roman_to_int(s: &str) -> Result<u32, MiningError> {
    let err = || MiningError::NotRoman(s.to_string());
    // (one, five, ten) symbols per decimal place, most significant first.
    const PLACES: [(u32, char, char, char); 4] = [
        (1000, 'M', '?', '?'),
        (100, 'C', 'D', 'M'),
        (10, 'X', 'L', 'C'),
        (1, 'I', 'V', 'X'),
    ];
    let mut rest = s.as_bytes();
    let mut total = 0;
    for (unit, one, five, ten) in PLACES {
        let patterns: Vec<(String, u32)> = if unit == 1000 {
            (1..=3).map(|d| (one.to_string().repeat(d as usize), d)).collect()
        } else {
            let (o, f, t) = (one.to_string(), five.to_string(), ten.to_string());
            vec![
                (format!("{o}{t}"), 9),
                (format!("{f}{}", o.repeat(3)), 8),
                (format!("{f}{}", o.repeat(2)), 7),
                (format!("{f}{o}"), 6),
                (f.clone(), 5),
                (format!("{o}{f}"), 4),
                (o.repeat(3), 3),
                (o.repeat(2), 2),
                (o.clone(), 1),
            ]
        };
        let mut ordered = patterns;
        ordered.sort_by_key(|p| std::cmp::Reverse(p.0.len()));
        if let Some((pat, digit)) = ordered.iter().find(|(p, _)| rest.starts_with(p.as_bytes())) {
            rest = &rest[pat.len()..];
            total += unit * digit;
        }
    }
    if !rest.is_empty() || total == 0 {
        return Err(err());
    }
    Ok(total)
}

/// True iff the numbers are exactly a permutation of `1..=total`.
pub fn sequence_parsable_with_total(numbers: &[u32], total: usize) -> bool {
    if total == 0 || numbers.len() != total {
        return false;
    }
    let mut sorted = numbers.to_vec();
    sorted.sort_unstable();
    sorted.iter().enumerate().all(|(i, n)| *n as usize == i + 1)
}

/// True iff `sorted(numbers) == [1, 2, ..., len]`.
pub fn sequence_parsable(numbers: &[u32]) -> bool {
    sequence_parsable_with_total(numbers, numbers.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinedKind {
    Figure,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumberScheme {
    Whole,
    Roman,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedObject {
    pub kind: MinedKind,
    pub label_raw: String,
    pub number_whole: Option<u32>,
    pub number_roman: Option<u32>,
    pub caption_box: Option<BBox>,
    pub figure_box: Option<BBox>,
    pub page_index: u32,
}

/// Number token of a label such as "Figure 3", "Tab. IV" or "12".
///
/// Returns `(whole, roman)`; both are `None` for non-standard labels like "4a".
pub fn parse_label_number(label: &str) -> (Option<u32>, Option<u32>) {
    let Some(token) = label.split_whitespace().last() else {
        return (None, None);
    };
    let token = token.trim_end_matches(['.', ':', ',', ';']);
    if !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit()) {
        return (token.parse().ok(), None);
    }
    (None, roman_to_int(&token.to_ascii_uppercase()).ok())
}

/// Kind for a miner's type string; "Plate" counts as a figure.
pub fn kind_from_label(fig_type: &str) -> Option<MinedKind> {
    match fig_type.trim().to_ascii_lowercase().as_str() {
        "figure" | "fig" | "fig." | "plate" => Some(MinedKind::Figure),
        "table" | "tab" | "tab." => Some(MinedKind::Table),
        _ => None,
    }
}

impl MinedObject {
    pub fn from_label(kind: MinedKind, label_raw: &str, page_index: u32) -> Self {
        let (number_whole, number_roman) = parse_label_number(label_raw);
        MinedObject {
            kind,
            label_raw: label_raw.to_string(),
            number_whole,
            number_roman,
            caption_box: None,
            figure_box: None,
            page_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsabilityVerdict {
    pub article_id: String,
    pub figures_parsable: bool,
    pub tables_parsable: bool,
    pub figure_scheme: NumberScheme,
    pub table_scheme: NumberScheme,
}

fn kind_verdict(objs: &[MinedObject], kind: MinedKind) -> NumberScheme {
    let of_kind: Vec<&MinedObject> = objs.iter().filter(|o| o.kind == kind).collect();
    let whole: Vec<u32> = of_kind.iter().filter_map(|o| o.number_whole).collect();
    if sequence_parsable_with_total(&whole, of_kind.len()) {
        return NumberScheme::Whole;
    }
    let roman: Vec<u32> = of_kind.iter().filter_map(|o| o.number_roman).collect();
    if sequence_parsable_with_total(&roman, of_kind.len()) {
        return NumberScheme::Roman;
    }
    NumberScheme::None
}

pub fn article_parsability(article_id: &str, objs: &[MinedObject]) -> ParsabilityVerdict {
    let figure_scheme = kind_verdict(objs, MinedKind::Figure);
    let table_scheme = kind_verdict(objs, MinedKind::Table);
    ParsabilityVerdict {
        article_id: article_id.to_string(),
        figures_parsable: figure_scheme != NumberScheme::None,
        tables_parsable: table_scheme != NumberScheme::None,
        figure_scheme,
        table_scheme,
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct MinerBoundary {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct MinerFigure {
    fig_type: String,
    name: serde_json::Value,
    page: u32,
    region_boundary: Option<MinerBoundary>,
    caption_boundary: Option<MinerBoundary>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MinerFile {
    List(Vec<MinerFigure>),
    Wrapped { figures: Vec<MinerFigure> },
}

fn boundary_to_px(b: Option<MinerBoundary>, scale: f64) -> Result<Option<BBox>, MiningError> {
    b.map(|b| {
        BBox::new(b.x1 * scale, b.y1 * scale, b.x2 * scale, b.y2 * scale)
            .map_err(|e| MiningError::SchemaError(e.to_string()))
    })
    .transpose()
}

/// Parse a pdffigures2-style figure list. Boundaries are 72-dpi points and
/// come back in the `dpi_effective` pixel frame.
pub fn parse_pdffigures2(json: &str, dpi_effective: u32) -> Result<Vec<MinedObject>, MiningError> {
    let file: MinerFile = serde_json::from_str(json).map_err(|e| MiningError::SchemaError(e.to_string()))?;
    let figures = match file {
        MinerFile::List(v) => v,
        MinerFile::Wrapped { figures } => figures,
    };
    let scale = dpi_effective as f64 / 72.0;
    figures
        .into_iter()
        .map(|f| {
            let kind = kind_from_label(&f.fig_type)
                .ok_or_else(|| MiningError::SchemaError(format!("unknown figType {:?}", f.fig_type)))?;
            let name = match &f.name {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                other => return Err(MiningError::SchemaError(format!("bad name {other}"))),
            };
            let mut obj = MinedObject::from_label(kind, &name, f.page);
            obj.label_raw = format!("{} {}", f.fig_type, name);
            obj.figure_box = boundary_to_px(f.region_boundary, scale)?;
            obj.caption_box = boundary_to_px(f.caption_boundary, scale)?;
            Ok(obj)
        })
        .collect()
}

/// Decade label for a publication year, or "unknown".
pub fn decade_bin(year: Option<i32>) -> String {
    match year {
        Some(y) => format!("{}", y.div_euclid(10) * 10),
        None => "unknown".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecadeRow {
    pub tool: String,
    pub decade: String,
    pub articles: usize,
    pub figures_parsable: usize,
    pub tables_parsable: usize,
    pub pct_figures: f64,
    pub pct_tables: f64,
}

/// Per-tool, per-decade parsability percentages plus an `all` row per tool.
///
/// `verdicts` pairs a tool name with its verdicts; `years` maps article id
/// to publication year. Bins without articles do not appear.
pub fn corpus_report(verdicts: &[(String, Vec<ParsabilityVerdict>)], years: &BTreeMap<String, i32>) -> Vec<DecadeRow> {
    let mut rows = Vec::new();
    for (tool, list) in verdicts {
        let mut bins: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
        for v in list {
            let bin = decade_bin(years.get(&v.article_id).copied());
            for key in [bin, "all".to_string()] {
                let e = bins.entry(key).or_default();
                e.0 += 1;
                e.1 += v.figures_parsable as usize;
                e.2 += v.tables_parsable as usize;
            }
        }
        // Decades ascending, then "all", then "unknown".
        let mut keys: Vec<String> = bins.keys().cloned().collect();
        keys.sort_by_key(|k| match k.parse::<i32>() {
            Ok(y) => (0, y),
            Err(_) if k == "all" => (1, 0),
            Err(_) => (2, 0),
        });
        for decade in keys {
            let (n, f, t) = bins[&decade];
            rows.push(DecadeRow {
                tool: tool.clone(),
                decade,
                articles: n,
                figures_parsable: f,
                tables_parsable: t,
                pct_figures: 100.0 * f as f64 / n as f64,
                pct_tables: 100.0 * t as f64 / n as f64,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn int_to_roman(mut n: u32) -> String {
        const TABLE: [(u32, &str); 13] = [
            (1000, "M"),
            (900, "CM"),
            (500, "D"),
            (400, "CD"),
            (100, "C"),
            (90, "XC"),
            (50, "L"),
            (40, "XL"),
            (10, "X"),
            (9, "IX"),
            (5, "V"),
            (4, "IV"),
            (1, "I"),
        ];
        let mut out = String::new();
        for (v, s) in TABLE {
            while n >= v {
                out.push_str(s);
                n -= v;
            }
        }
        out
    }

    #[test]
    fn roman_examples() {
        assert_eq!(roman_to_int("IV"), Ok(4));
        assert_eq!(roman_to_int("XIX"), Ok(19));
        assert_eq!(roman_to_int("MCMXCIV"), Ok(1994));
        for bad in ["IC", "XIIII", "", "IIII", "VX", "IIX", "MMMM", "iv", "XLX", "DD"] {
            assert_eq!(roman_to_int(bad), Err(MiningError::NotRoman(bad.into())), "{bad}");
        }
    }

    #[test]
    fn roman_round_trip_1_to_100() {
        for n in 1..=100 {
            assert_eq!(roman_to_int(&int_to_roman(n)), Ok(n));
        }
    }

    #[test]
    fn roman_accepts_exactly_canonical_forms() {
        let canonical: std::collections::HashSet<String> = (1..=3999).map(int_to_roman).collect();
        // Every string over IVXLC up to length 4 parses iff it is canonical.
        let alphabet = ['I', 'V', 'X', 'L', 'C'];
        let mut stack = vec![String::new()];
        while let Some(s) = stack.pop() {
            if !s.is_empty() {
                assert_eq!(roman_to_int(&s).is_ok(), canonical.contains(&s), "{s}");
            }
            if s.len() < 4 {
                for c in alphabet {
                    stack.push(format!("{s}{c}"));
                }
            }
        }
    }

    #[test]
    fn sequence_examples() {
        assert!(sequence_parsable(&[1, 2, 3]));
        assert!(sequence_parsable(&[3, 1, 2]));
        assert!(!sequence_parsable(&[1, 3]));
        assert!(!sequence_parsable(&[1, 2, 2, 3]));
        assert!(!sequence_parsable(&[]));
        assert!(!sequence_parsable(&[2, 3]));
    }

    #[test]
    fn label_numbers() {
        assert_eq!(parse_label_number("Figure 5"), (Some(5), None));
        assert_eq!(parse_label_number("Fig. 5."), (Some(5), None));
        assert_eq!(parse_label_number("Tab. IV"), (None, Some(4)));
        assert_eq!(parse_label_number("Table iv:"), (None, Some(4)));
        assert_eq!(parse_label_number("Figure 4a"), (None, None));
        assert_eq!(parse_label_number(""), (None, None));
    }

    fn obj(kind: MinedKind, label: &str) -> MinedObject {
        MinedObject::from_label(kind, label, 0)
    }

    #[test]
    fn article_examples() {
        let objs = vec![
            obj(MinedKind::Figure, "Figure 1"),
            obj(MinedKind::Figure, "Figure 2"),
            obj(MinedKind::Figure, "Figure 3"),
            obj(MinedKind::Table, "Table I"),
            obj(MinedKind::Table, "Table II"),
        ];
        let v = article_parsability("a", &objs);
        assert!(v.figures_parsable && v.tables_parsable);
        assert_eq!((v.figure_scheme, v.table_scheme), (NumberScheme::Whole, NumberScheme::Roman));

        let objs = vec![
            obj(MinedKind::Figure, "Figure 1"),
            obj(MinedKind::Figure, "Figure 2"),
            obj(MinedKind::Figure, "Figure 4a"),
        ];
        assert!(!article_parsability("b", &objs).figures_parsable);

        let v = article_parsability("c", &[obj(MinedKind::Table, "Table 1")]);
        assert!(!v.figures_parsable);
        assert_eq!(v.figure_scheme, NumberScheme::None);
        assert!(v.tables_parsable);
    }

    #[test]
    fn schemes_do_not_mix() {
        // 1, II, 3 is complete only if both schemes could be combined.
        let objs = vec![
            obj(MinedKind::Figure, "Figure 1"),
            obj(MinedKind::Figure, "Figure II"),
            obj(MinedKind::Figure, "Figure 3"),
        ];
        assert!(!article_parsability("m", &objs).figures_parsable);
    }

    #[test]
    fn pdffigures2_examples() {
        let json = r#"[
          {"caption":"Fig. 1. A plot.","captionBoundary":{"x1":72,"x2":144,"y1":150,"y2":160},
           "figType":"Figure","imageText":[],"name":"1","page":2,
           "regionBoundary":{"x1":72,"x2":144,"y1":72,"y2":144},"renderDpi":150},
          {"figType":"Table","name":"IV","page":3,"regionBoundary":{"x1":10,"x2":20,"y1":10,"y2":20}}
        ]"#;
        let objs = parse_pdffigures2(json, 300).unwrap();
        assert_eq!(objs.len(), 2);
        let fb = objs[0].figure_box.unwrap();
        assert_eq!(fb.coords(), [300., 300., 600., 600.]);
        assert_eq!(objs[0].number_whole, Some(1));
        assert_eq!(objs[0].page_index, 2);
        assert!(objs[0].caption_box.is_some());
        assert_eq!(objs[1].kind, MinedKind::Table);
        assert_eq!(objs[1].number_roman, Some(4));
        assert_eq!(objs[1].label_raw, "Table IV");

        assert!(parse_pdffigures2("[]", 300).unwrap().is_empty());
        assert!(parse_pdffigures2(r#"{"figures":[]}"#, 300).unwrap().is_empty());
        assert!(matches!(parse_pdffigures2(r#"{"nope":1}"#, 300), Err(MiningError::SchemaError(_))));
        assert!(matches!(
            parse_pdffigures2(r#"[{"figType":"Chart","name":"1","page":0}]"#, 300),
            Err(MiningError::SchemaError(_))
        ));
    }

    #[test]
    fn corpus_report_bins() {
        let verdict = |id: &str, fig: bool| ParsabilityVerdict {
            article_id: id.into(),
            figures_parsable: fig,
            tables_parsable: false,
            figure_scheme: if fig { NumberScheme::Whole } else { NumberScheme::None },
            table_scheme: NumberScheme::None,
        };
        let mut years = BTreeMap::new();
        let list: Vec<ParsabilityVerdict> = (0..10)
            .map(|i| {
                years.insert(format!("a{i}"), 1955);
                verdict(&format!("a{i}"), i < 3)
            })
            .chain(std::iter::once(verdict("nometa", true)))
            .collect();
        let rows = corpus_report(&[("pdffigures2".into(), list)], &years);
        let decades: Vec<&str> = rows.iter().map(|r| r.decade.as_str()).collect();
        assert_eq!(decades, ["1950", "all", "unknown"]);
        assert_eq!(rows[0].pct_figures, 30.0);
        assert_eq!(rows[1].articles, 11);
        assert_eq!(rows[2].pct_figures, 100.0);
    }

    proptest! {
        #[test]
        fn parsability_is_permutation_invariant(
            labels in prop::collection::vec((any::<bool>(), 1u32..6, any::<bool>()), 0..8),
            seed in any::<u64>(),
        ) {
            let objs: Vec<MinedObject> = labels.iter().map(|(fig, n, roman)| {
                let kind = if *fig { MinedKind::Figure } else { MinedKind::Table };
                let label = if *roman { int_to_roman(*n) } else { n.to_string() };
                obj(kind, &label)
            }).collect();
            let mut shuffled = objs.clone();
            let len = shuffled.len().max(1);
            shuffled.rotate_left((seed as usize) % len);
            shuffled.reverse();
            let a = article_parsability("x", &objs);
            prop_assert_eq!(&a, &article_parsability("x", &shuffled));
            if a.figures_parsable {
                let nums: Vec<u32> = objs.iter().filter(|o| o.kind == MinedKind::Figure).map(|o| match a.figure_scheme {
                    NumberScheme::Whole => o.number_whole,
                    NumberScheme::Roman => o.number_roman,
                    NumberScheme::None => None,
                }.unwrap()).collect();
                prop_assert!(sequence_parsable(&nums));
            }
        }
    }
}
