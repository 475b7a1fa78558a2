//! Subcommand implementations. Inputs are processed in sorted order and
//! every output is written atomically, so reruns produce identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use image::GrayImage;
use log::{info, warn};
use rayon::prelude::*;
use scanfig::eval::{self, CutoffMode, GroundTruth, PageEval};
use scanfig::features::{self, ChannelSet, FallbackTagger, SidecarTags, TagProvider};
use scanfig::geometry::BBox;
use scanfig::hocr::{parse_hocr_with_report, Page};
use scanfig::mining::{self, article_parsability};
use scanfig::postprocess::{heuristic_detections, run_pipeline, Detection, PairedResult, PipelineConfig};
use scanfig::rects::{detect_rectangles, RectCandidate};
use scanfig::synth::{generate_page, SynthConfig};
use serde::Serialize;

use crate::fsio::{find_sibling, require_inputs, stem, write_atomic, write_csv, write_json};
use crate::{CutoffModeArg, Ctx, EvalArgs, FeaturesArgs, IngestArgs, ParsabilityArgs, PipelineArgs, RectsArgs, SynthArgs};

const HOCR_EXTS: &[&str] = &["hocr", "html", "xhtml"];
const IMAGE_EXTS: &[&str] = &["png", "pgm", "pnm", "ppm", "jpg", "jpeg"];

fn load_page(path: &Path) -> Result<Page> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Page::from_json(&text).with_context(|| format!("parsing page {}", path.display()))
}

fn load_image(dir: &Path, stem: &str) -> Result<GrayImage> {
    let path = find_sibling(dir, stem, IMAGE_EXTS)
        .ok_or_else(|| anyhow!("no image for page {stem} in {}", dir.display()))?;
    Ok(image::open(&path)
        .with_context(|| format!("decoding {}", path.display()))?
        .to_luma8())
}

/// Run `f` over `items` in parallel, keeping input order, and fail on the
/// first error in that order.
fn par_all<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    items.par_iter().map(f).collect::<Vec<_>>().into_iter().collect()
}

pub fn ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    let (input, output) = (ctx.path(&a.input), ctx.path(&a.output));
    let dpi = ctx.file.pick(a.dpi, "dpi_effective", 0u32)?;
    let files = require_inputs(&input, HOCR_EXTS)?;
    let results: Vec<Result<usize>> = files
        .par_iter()
        .map(|path| {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let id = stem(path);
            let (mut page, report) = parse_hocr_with_report(&bytes, &id)?;
            if dpi > 0 {
                page.dpi_effective = dpi;
            }
            if report.warning_count() > 0 {
                warn!("{id}: {report:?}");
            }
            write_atomic(&output.join(format!("{id}.json")), page.to_json().as_bytes())?;
            Ok(report.warning_count())
        })
        .collect();
    let mut ok = 0;
    let mut warnings = 0;
    let mut failures = Vec::new();
    for (path, r) in files.iter().zip(results) {
        match r {
            Ok(w) => {
                ok += 1;
                warnings += w;
            }
            Err(e) => failures.push(format!("{}: {e:#}", path.display())),
        }
    }
    println!("ingested {ok} of {} files, {warnings} warnings, {} failed", files.len(), failures.len());
    for f in &failures {
        eprintln!("failed {f}");
    }
    if ok == 0 {
        bail!("every input failed to parse");
    }
    Ok(())
}

fn tags_for(dir: Option<&Path>, id: &str) -> Result<Box<dyn TagProvider>> {
    match dir {
        None => Ok(Box::new(FallbackTagger)),
        Some(d) => {
            let path = d.join(format!("{id}.json"));
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading tags {}", path.display()))?;
            Ok(Box::new(SidecarTags::from_json(&text)?))
        }
    }
}

pub fn features(ctx: &Ctx, a: &FeaturesArgs) -> Result<()> {
    let (pages, images, output) = (ctx.path(&a.pages), ctx.path(&a.images), ctx.path(&a.output));
    let tags = a.tags.as_ref().map(|t| ctx.path(t));
    let channels = match &a.channels {
        Some(c) => c.clone(),
        None => ChannelSet::parse(ctx.file.raw("channels").unwrap_or("m12")).context("config key channels")?,
    };
    let files = require_inputs(&pages, &["json"])?;
    par_all(&files, |path| {
        let id = stem(path);
        let page = load_page(path)?;
        let img = load_image(&images, &id)?;
        let provider = tags_for(tags.as_deref(), &id)?;
        let stack = features::rasterize(&page, &img, &channels, provider.as_ref()).with_context(|| format!("page {id}"))?;
        write_atomic(&output.join(format!("{id}.fstk")), &stack.to_fstk_bytes())?;
        if a.png {
            let dir = output.join("png");
            std::fs::create_dir_all(&dir)?;
            stack.write_pngs(&dir, &id)?;
        }
        Ok(())
    })?;
    println!("wrote {} feature stacks with {} channels", files.len(), channels.len());
    Ok(())
}

fn find_rects(images: &Path, page: &Page, id: &str) -> Result<Vec<RectCandidate>> {
    let img = load_image(images, id)?;
    detect_rectangles(&img, &page.words, page.width_px, page.height_px).with_context(|| format!("page {id}"))
}

pub fn rects(ctx: &Ctx, a: &RectsArgs) -> Result<()> {
    let (pages, images, output) = (ctx.path(&a.pages), ctx.path(&a.images), ctx.path(&a.output));
    let files = require_inputs(&pages, &["json"])?;
    let counts = par_all(&files, |path| {
        let id = stem(path);
        let page = load_page(path)?;
        let found = find_rects(&images, &page, &id)?;
        write_json(&output.join(format!("{id}.json")), &found)?;
        Ok(found.len())
    })?;
    println!("found {} rectangles on {} pages", counts.iter().sum::<usize>(), files.len());
    Ok(())
}

fn pipeline_config(ctx: &Ctx, a: &PipelineArgs) -> Result<PipelineConfig> {
    let d = PipelineConfig::default();
    let f = &ctx.file;
    let cfg = PipelineConfig {
        last_step: f.pick(a.last_step, "last_step", d.last_step)?,
        nms_iou: f.pick(a.nms_iou, "nms_iou", d.nms_iou)?,
        score_thresh: f.pick(a.score_thresh, "score_thresh", d.score_thresh)?,
        dedup_iou: f.pick(a.dedup_iou, "dedup_iou", d.dedup_iou)?,
        caption_area_max_frac: f.pick(a.caption_area_max_frac, "caption_area_max_frac", d.caption_area_max_frac)?,
        grow_max_iters: f.pick(a.grow_max_iters, "grow_max_iters", d.grow_max_iters)?,
        keywords: f.list(a.keywords.clone(), "keywords", d.keywords)?,
        fuzz_max_edits: f.pick(a.fuzz_max_edits, "fuzz_max_edits", d.fuzz_max_edits)?,
        heuristic_caption_score: f.pick(a.heuristic_caption_score, "heuristic_caption_score", d.heuristic_caption_score)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Model detections as JSON or as `class cx cy w h [score]` lines.
fn load_detections(dir: &Path, page: &Page, id: &str) -> Result<Vec<Detection>> {
    let Some(path) = find_sibling(dir, id, &["json", "txt"]) else {
        warn!("{id}: no detections file, treating the page as empty");
        return Ok(Vec::new());
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let score = match fields.get(5) {
            Some(s) => s.parse::<f64>().with_context(|| format!("{}:{}: bad score", path.display(), i + 1))?,
            None => 1.0,
        };
        let head = fields[..fields.len().min(5)].join(" ");
        let truth = eval::parse_yolo_truth(&head, page.width_px, page.height_px)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.extend(truth.into_iter().map(|t| Detection::new(t.bbox, t.cls, score)));
    }
    Ok(out)
}

fn load_mined(dir: &Path, page: &Page, id: &str) -> Result<Vec<BBox>> {
    let path = dir.join(format!("{id}.json"));
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let objs = mining::parse_pdffigures2(&text, page.dpi_effective).with_context(|| format!("parsing {}", path.display()))?;
    Ok(objs.into_iter().filter_map(|o| o.caption_box).collect())
}

pub fn pipeline(ctx: &Ctx, a: &PipelineArgs) -> Result<()> {
    let cfg = pipeline_config(ctx, a)?;
    let pages = ctx.path(&a.pages);
    let output = ctx.path(&a.output);
    let rects_dir = a.rects.as_ref().map(|p| ctx.path(p));
    let images = a.images.as_ref().map(|p| ctx.path(p));
    let dets_dir = a.detections.as_ref().map(|p| ctx.path(p));
    let mined_dir = a.mined.as_ref().map(|p| ctx.path(p));
    if a.heuristic && rects_dir.is_none() && images.is_none() {
        bail!("--heuristic needs --rects or --images");
    }
    let files = require_inputs(&pages, &["json"])?;
    let started = Instant::now();
    let figures = par_all(&files, |path| {
        let id = stem(path);
        let page = load_page(path)?;
        let rects: Vec<RectCandidate> = match (&rects_dir, &images) {
            (Some(d), _) => {
                let p = d.join(format!("{id}.json"));
                let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            (None, Some(img)) => find_rects(img, &page, &id)?,
            (None, None) => Vec::new(),
        };
        let raw = match &dets_dir {
            Some(d) => load_detections(d, &page, &id)?,
            None => heuristic_detections(&rects),
        };
        let mined = match &mined_dir {
            Some(d) => load_mined(d, &page, &id)?,
            None => Vec::new(),
        };
        let run = run_pipeline(&raw, &page, &mined, &rects, &cfg);
        let out = output.join(format!("{id}.json"));
        let figures = match run.pairs() {
            Some(pairs) => {
                write_json(&out, pairs)?;
                pairs.len()
            }
            None => {
                write_json(&out, run.detections())?;
                run.detections().len()
            }
        };
        if ctx.trace {
            write_json(&output.join("trace").join(format!("{id}.json")), &run.snapshots)?;
        }
        Ok(figures)
    })?;
    info!("pipeline took {:.2}s", started.elapsed().as_secs_f64());
    let noun = if cfg.last_step >= 8 { "pairs" } else { "detections" };
    println!("wrote {} {noun} for {} pages", figures.iter().sum::<usize>(), files.len());
    Ok(())
}

/// Detections from a pipeline result file holding either pairs or a flat list.
fn load_results(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let is_pairs = value
        .as_array()
        .and_then(|a| a.first())
        .is_some_and(|v| v.get("figure").is_some());
    if is_pairs {
        let pairs: Vec<PairedResult> = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        Ok(pairs.into_iter().flat_map(|p| std::iter::once(p.figure).chain(p.caption)).collect())
    } else {
        serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))
    }
}

fn load_truth(dir: &Path, pages: Option<&Path>, id: &str) -> Result<Vec<GroundTruth>> {
    let path = find_sibling(dir, id, &["json", "txt"])
        .ok_or_else(|| anyhow!("missing truth for page {id} in {}", dir.display()))?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        eval::parse_box_list_truth(&text)
    } else {
        let pages = pages.ok_or_else(|| anyhow!("normalized truth {} needs --pages for the page size", path.display()))?;
        let page = load_page(&pages.join(format!("{id}.json")))?;
        eval::parse_yolo_truth(&text, page.width_px, page.height_px)
    };
    parsed.with_context(|| format!("in {}", path.display()))
}

#[derive(Serialize)]
struct PairRow {
    iou: f64,
    excess_frac: f64,
    lost_frac: f64,
    compliant: bool,
}

pub fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let (results, truths, output) = (ctx.path(&a.results), ctx.path(&a.truths), ctx.path(&a.output));
    let pages_dir = a.pages.as_ref().map(|p| ctx.path(p));
    let thresholds = ctx.file.list(a.thresholds.clone(), "thresholds", eval::DEFAULT_THRESHOLDS.to_vec())?;
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        bail!("thresholds must lie in (0, 1], got {thresholds:?}");
    }
    let mode_arg = ctx.file.pick(a.cutoff_mode, "cutoff_mode", CutoffModeArg::Percentile)?;
    let cutoff = (a.cutoff_analysis || a.cutoff_mode.is_some()).then_some(match mode_arg {
        CutoffModeArg::Percentile => CutoffMode::CompliantPercentile,
        CutoffModeArg::Threshold => CutoffMode::ComplianceThreshold,
    });
    let years = match &a.meta {
        Some(m) => crate::fsio::read_years(&ctx.path(m))?,
        None => BTreeMap::new(),
    };
    let files = require_inputs(&results, &["json"])?;
    let pages = par_all(&files, |path| {
        let id = stem(path);
        Ok(PageEval {
            year: crate::fsio::year_for_page(&years, &id),
            truths: load_truth(&truths, pages_dir.as_deref(), &id)?,
            founds: load_results(path)?,
            page_id: id,
        })
    })?;
    let rep = eval::report(&pages, &thresholds, cutoff)?;
    write_json(&output.join("report.json"), &rep)?;
    write_csv(&output.join("metrics.csv"), &rep.metrics)?;
    write_csv(&output.join("decades.csv"), &rep.decades)?;
    if let Some(el) = &rep.excess_lost {
        let rows: Vec<PairRow> = el
            .pairs
            .iter()
            .map(|p| PairRow {
                iou: p.iou,
                excess_frac: p.excess_frac,
                lost_frac: p.lost_frac,
                compliant: p.compliant,
            })
            .collect();
        write_csv(&output.join("excess_lost.csv"), &rows)?;
        println!("iou cutoff {:.4} ({} of {} pairs compliant)", el.cutoff, el.compliant, el.pairs.len());
    }
    for m in &rep.metrics {
        println!(
            "{:<14} iou {:.2}  P {:.4}  R {:.4}  F1 {:.4}  (tp {} fp {} fn {})",
            m.class, m.iou_thresh, m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_
        );
    }
    Ok(())
}

pub fn parsability(ctx: &Ctx, a: &ParsabilityArgs) -> Result<()> {
    let years = crate::fsio::read_years(&ctx.path(&a.meta))?;
    let mut verdicts = Vec::new();
    for (tool, dir) in &a.miners {
        let files = require_inputs(&ctx.path(dir), &["json"])?;
        let per_tool = par_all(&files, |path| {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let objs = mining::parse_pdffigures2(&text, scanfig::hocr::DEFAULT_DPI)
                .with_context(|| format!("parsing {}", path.display()))?;
            Ok(article_parsability(&stem(path), &objs))
        })?;
        verdicts.push((tool.clone(), per_tool));
    }
    let rows = mining::corpus_report(&verdicts, &years);
    write_csv(&ctx.path(&a.output), &rows)?;
    for r in rows.iter().filter(|r| r.decade == "all") {
        println!(
            "{}: {} articles, figures parsable {:.1}%, tables parsable {:.1}%",
            r.tool, r.articles, r.pct_figures, r.pct_tables
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct MetaOut<'a> {
    article_id: &'a str,
    year: i32,
}

pub fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        width: a.width.unwrap_or(d.width),
        height: a.height.unwrap_or(d.height),
        ..d
    };
    if cfg.width < 600 || cfg.height < 800 {
        bail!("synthetic pages must be at least 600x800, got {}x{}", cfg.width, cfg.height);
    }
    let out = ctx.path(&a.output);
    let dirs: Vec<PathBuf> = ["hocr", "images", "truth"].iter().map(|d| out.join(d)).collect();
    for d in &dirs {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let indices: Vec<usize> = (0..a.pages).collect();
    let meta = par_all(&indices, |&i| {
        let s = generate_page(&cfg, a.seed, i);
        write_atomic(&dirs[0].join(format!("{}.hocr", s.id)), s.hocr.as_bytes())?;
        let mut png = Vec::new();
        s.image
            .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .context("encoding png")?;
        write_atomic(&dirs[1].join(format!("{}.png", s.id)), &png)?;
        write_json(&dirs[2].join(format!("{}.json", s.id)), &s.truths)?;
        Ok((s.id, s.year))
    })?;
    let rows: Vec<MetaOut> = meta.iter().map(|(id, y)| MetaOut { article_id: id, year: *y }).collect();
    write_csv(&out.join("meta.csv"), &rows)?;
    println!("generated {} pages in {}", a.pages, out.display());
    Ok(())
}
