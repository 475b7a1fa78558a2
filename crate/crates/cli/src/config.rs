//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Recognized keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `jobs` | worker threads |
//! | `trace` | `true` to write per-step pipeline snapshots |
//! | `channels` | `m12`, `all` or a comma-separated channel list |
//! | `dpi_effective` | pixel density recorded on ingested pages |
//! | `last_step` | last post-processing step, 1 to 10 |
//! | `nms_iou`, `score_thresh` | step 1 overlap and score cuts |
//! | `dedup_iou` | step 2 overlap cut |
//! | `keywords` | comma-separated caption keywords for step 4 |
//! | `fuzz_max_edits` | edit distance allowed on keywords |
//! | `heuristic_caption_score` | score given to step 4 captions |
//! | `grow_max_iters` | step 5 iteration cap |
//! | `caption_area_max_frac` | step 7 page-area cut |
//! | `thresholds` | comma-separated evaluation IOU thresholds |
//! | `cutoff_mode` | `percentile` or `threshold` |
//!
//! Command-line flags override file values.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const KEYS: &[&str] = &[
    "jobs",
    "trace",
    "channels",
    "dpi_effective",
    "last_step",
    "nms_iou",
    "score_thresh",
    "dedup_iou",
    "keywords",
    "fuzz_max_edits",
    "heuristic_caption_score",
    "grow_max_iters",
    "caption_area_max_frac",
    "thresholds",
    "cutoff_mode",
];

#[derive(Debug, Default, Clone, PartialEq)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key = value", i + 1))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                bail!("config line {}: unknown key {k:?}", i + 1);
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Flag value if given, else the file value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.raw(key) {
            Some(s) => s.parse().map_err(|e| anyhow!("config key {key}: {e}")),
            None => Ok(default),
        }
    }

    pub fn list<T: FromStr>(&self, flag: Option<Vec<T>>, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.raw(key) {
            Some(s) => s
                .split(',')
                .map(|p| p.trim().parse().map_err(|e| anyhow!("config key {key}: {e}")))
                .collect(),
            None => Ok(default),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let c = FileConfig::parse("# run\nlast_step = 5\n\nthresholds = 0.5, 0.9\n").unwrap();
        assert_eq!(c.pick::<u8>(None, "last_step", 10).unwrap(), 5);
        assert_eq!(c.pick(Some(7u8), "last_step", 10).unwrap(), 7);
        assert_eq!(c.pick::<usize>(None, "jobs", 1).unwrap(), 1);
        assert_eq!(c.list::<f64>(None, "thresholds", vec![]).unwrap(), vec![0.5, 0.9]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(FileConfig::parse("colour = red").is_err());
        assert!(FileConfig::parse("last_step 5").is_err());
        let c = FileConfig::parse("last_step = five").unwrap();
        assert!(c.pick::<u8>(None, "last_step", 10).is_err());
    }
}
