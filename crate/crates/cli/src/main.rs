//! `scanfig`: batch driver for figure and caption localization on OCR'd pages.

mod commands;
mod config;
mod fsio;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use scanfig::features::ChannelSet;

use crate::config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "scanfig", version, about = "Locate figures and captions on OCR'd scientific pages")]
pub struct Cli {
    /// Directory that relative paths are resolved against.
    #[arg(long, global = true)]
    pub root: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Flat key = value configuration file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write per-step pipeline snapshots.
    #[arg(long, global = true)]
    pub trace: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert hOCR files into page JSON.
    Ingest(IngestArgs),
    /// Rasterize pages into 512x512 feature stacks.
    Features(FeaturesArgs),
    /// Find rectangular frames on page images.
    Rects(RectsArgs),
    /// Post-process detections into figure/caption pairs.
    Pipeline(PipelineArgs),
    /// Score results against ground truth.
    Eval(EvalArgs),
    /// Report how often mined figure and table numbering is parsable.
    Parsability(ParsabilityArgs),
    /// Generate a synthetic corpus with ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of .hocr, .html or .xhtml files.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for <stem>.json page files.
    #[arg(long)]
    pub output: PathBuf,
    /// Pixel density recorded on every page.
    #[arg(long)]
    pub dpi: Option<u32>,
}

fn parse_channels(s: &str) -> Result<ChannelSet, String> {
    ChannelSet::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Directory of page JSON files.
    #[arg(long)]
    pub pages: PathBuf,
    /// Directory of page images named after the page files.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// `m12`, `all` or a comma-separated channel list [default: m12].
    #[arg(long, value_parser = parse_channels)]
    pub channels: Option<ChannelSet>,
    /// Directory of <stem>.json word tag sidecars; the built-in tagger is used otherwise.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    /// Also write one PNG per channel under <output>/png.
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args)]
pub struct RectsArgs {
    #[arg(long)]
    pub pages: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Directory of page JSON files.
    #[arg(long)]
    pub pages: PathBuf,
    /// Directory of model detections: <stem>.json lists or <stem>.txt lines of `class cx cy w h score`.
    #[arg(long, required_unless_present = "heuristic", conflicts_with = "heuristic")]
    pub detections: Option<PathBuf>,
    /// Use rectangle candidates as the only figure source.
    #[arg(long)]
    pub heuristic: bool,
    /// Directory of <stem>.json rectangle candidate lists.
    #[arg(long)]
    pub rects: Option<PathBuf>,
    /// Directory of page images, used to find rectangles when --rects is absent.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Directory of per-page <stem>.json figure-miner output whose caption boxes are adopted.
    #[arg(long)]
    pub mined: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub last_step: Option<u8>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub score_thresh: Option<f64>,
    #[arg(long)]
    pub dedup_iou: Option<f64>,
    /// Caption keywords, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub keywords: Option<Vec<String>>,
    #[arg(long)]
    pub fuzz_max_edits: Option<usize>,
    #[arg(long)]
    pub heuristic_caption_score: Option<f64>,
    #[arg(long)]
    pub grow_max_iters: Option<usize>,
    #[arg(long)]
    pub caption_area_max_frac: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CutoffModeArg {
    Percentile,
    Threshold,
}

impl std::str::FromStr for CutoffModeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of pipeline results (<stem>.json).
    #[arg(long)]
    pub results: PathBuf,
    /// Directory of truths: <stem>.json box lists or <stem>.txt normalized lines.
    #[arg(long)]
    pub truths: PathBuf,
    /// Page JSON directory; needed to size normalized truths.
    #[arg(long)]
    pub pages: Option<PathBuf>,
    /// CSV with article_id and year columns for per-decade rows.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// IOU thresholds, comma separated [default: 0.1,0.6,0.8,0.9].
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Add the excess/lost area analysis and its IOU cutoff.
    #[arg(long)]
    pub cutoff_analysis: bool,
    #[arg(long, value_enum)]
    pub cutoff_mode: Option<CutoffModeArg>,
    /// Directory for report.json and the CSV tables.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParsabilityArgs {
    /// `tool=dir` with one <article_id>.json per article; repeatable.
    #[arg(long = "miner", required = true, value_parser = parse_miner)]
    pub miners: Vec<(String, PathBuf)>,
    /// CSV with article_id and year columns.
    #[arg(long)]
    pub meta: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub output: PathBuf,
}

fn parse_miner(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((tool, dir)) if !tool.is_empty() && !dir.is_empty() => Ok((tool.to_string(), PathBuf::from(dir))),
        _ => Err(format!("expected tool=dir, got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub pages: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
}

/// Global settings after merging flags and the configuration file.
pub struct Ctx {
    pub root: Option<PathBuf>,
    pub trace: bool,
    pub file: FileConfig,
}

impl Ctx {
    pub fn path(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(r) if p.is_relative() => r.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(&cli.root.as_deref().map_or(p.clone(), |r| r.join(p)))?,
        None => FileConfig::default(),
    };
    let jobs = file.pick(cli.jobs, "jobs", 0usize)?;
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("starting worker pool")?;
    }
    let ctx = Ctx {
        root: cli.root,
        trace: cli.trace || file.pick(None, "trace", false)?,
        file,
    };
    match cli.command {
        Command::Ingest(a) => commands::ingest(&ctx, &a),
        Command::Features(a) => commands::features(&ctx, &a),
        Command::Rects(a) => commands::rects(&ctx, &a),
        Command::Pipeline(a) => commands::pipeline(&ctx, &a),
        Command::Eval(a) => commands::eval(&ctx, &a),
        Command::Parsability(a) => commands::parsability(&ctx, &a),
        Command::Synth(a) => commands::synth(&ctx, &a),
    }
}
