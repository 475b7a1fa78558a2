//! File listing, atomic writes and small on-disk formats shared by commands.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

/// Files in `dir` whose extension is one of `exts`, sorted by name.
pub fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ok = path.is_file()
            && path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)));
        if ok {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Like [`list_files`] but an empty result is an error.
pub fn require_inputs(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let files = list_files(dir, exts)?;
    if files.is_empty() {
        bail!("no inputs: no {} files in {}", exts.join("/"), dir.display());
    }
    Ok(files)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    write_atomic(path, &w.into_inner()?)
}

/// File for `stem` in `dir` with the first extension that exists.
pub fn find_sibling(dir: &Path, stem: &str, exts: &[&str]) -> Option<PathBuf> {
    exts.iter().map(|e| dir.join(format!("{stem}.{e}"))).find(|p| p.is_file())
}

#[derive(Debug, serde::Deserialize)]
struct MetaRow {
    article_id: String,
    year: Option<i32>,
}

/// `article_id → year` from a metadata CSV with at least those two columns.
pub fn read_years(path: &Path) -> Result<BTreeMap<String, i32>> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for row in r.deserialize::<MetaRow>() {
        let row = row.with_context(|| format!("in {}", path.display()))?;
        if let Some(y) = row.year {
            out.insert(row.article_id, y);
        }
    }
    Ok(out)
}

/// Year of the article a page belongs to: the id equal to the page stem or
/// the longest id that prefixes it followed by `_`.
pub fn year_for_page(years: &BTreeMap<String, i32>, page: &str) -> Option<i32> {
    if let Some(y) = years.get(page) {
        return Some(*y);
    }
    years
        .iter()
        .filter(|(id, _)| page.strip_prefix(id.as_str()).is_some_and(|rest| rest.starts_with('_')))
        .max_by_key(|(id, _)| id.len())
        .map(|(_, y)| *y)
}
