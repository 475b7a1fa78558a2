//! End-to-end runs of the `scanfig` binary on small generated corpora.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn scanfig(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scanfig"))
        .arg("--root")
        .arg(root)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = scanfig(root, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
    v.sort();
    v
}

/// A synthetic corpus of `n` pages ingested into `pages/`.
fn corpus(n: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(root, &["synth", "--output", ".", "--pages", &n.to_string(), "--seed", "11", "--width", "1275", "--height", "1650"]);
    ok(root, &["ingest", "--input", "hocr", "--output", "pages"]);
    dir
}

const HOCR: &str = r#"<html><body><div class="ocr_page" title="bbox 0 0 100 200">
<span class="ocr_line" title="bbox 10 10 90 30; x_size 20; x_descenders 4; x_ascenders 5">
<span class="ocrx_word" title="bbox 10 10 40 30; x_wconf 91">Hello</span>
<span class="ocrx_word" title="bbox 50 10 90 30; x_wconf 88">world</span>
</span></div></body></html>"#;

#[test]
fn ingest_single_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("in")).unwrap();
    std::fs::write(dir.path().join("in/p1.hocr"), HOCR).unwrap();
    let out = ok(dir.path(), &["ingest", "--input", "in", "--output", "out", "--dpi", "150"]);
    assert!(out.contains("ingested 1 of 1"), "{out}");
    let page: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/p1.json")).unwrap()).unwrap();
    assert_eq!(page["words"].as_array().unwrap().len(), 2);
    assert_eq!(page["dpi_effective"], 150);
}

#[test]
fn ingest_empty_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("in")).unwrap();
    let out = scanfig(dir.path(), &["ingest", "--input", "in", "--output", "out"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no inputs"));
}

#[test]
fn ingest_mixed_inputs_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("in")).unwrap();
    std::fs::write(dir.path().join("in/good.hocr"), HOCR).unwrap();
    std::fs::write(dir.path().join("in/bad.hocr"), "<html><body>no page here").unwrap();
    let out = scanfig(dir.path(), &["ingest", "--input", "in", "--output", "out"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ingested 1 of 2 files"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.hocr"));
    assert!(dir.path().join("out/good.json").is_file());
    assert!(!dir.path().join("out/bad.json").exists());

    std::fs::remove_file(dir.path().join("in/good.hocr")).unwrap();
    let out = scanfig(dir.path(), &["ingest", "--input", "in", "--output", "out"]);
    assert!(!out.status.success());
}

#[test]
fn feature_channel_selection() {
    let dir = corpus(1);
    let root = dir.path();
    ok(root, &["features", "--pages", "pages", "--images", "images", "--output", "m12"]);
    ok(root, &["features", "--pages", "pages", "--images", "images", "--output", "gs", "--channels", "gs", "--png"]);
    let m12 = std::fs::metadata(root.join("m12/synth_0000.fstk")).unwrap().len();
    let gs = std::fs::metadata(root.join("gs/synth_0000.fstk")).unwrap().len();
    let plane = 512 * 512;
    assert!(m12 > 9 * plane && m12 < 10 * plane, "{m12}");
    assert!(gs > plane && gs < 2 * plane, "{gs}");
    assert_eq!(files(&root.join("gs/png")).len(), 1);

    let out = scanfig(root, &["features", "--pages", "pages", "--images", "images", "--output", "x", "--channels", "gs,nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn pipeline_early_stop_and_trace() {
    let dir = corpus(2);
    let root = dir.path();
    ok(root, &["pipeline", "--pages", "pages", "--heuristic", "--images", "images", "--output", "s5", "--last-step", "5"]);
    let dets: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("s5/synth_0000.json")).unwrap()).unwrap();
    for d in dets.as_array().unwrap() {
        assert!(d.get("class").is_some() && d.get("figure").is_none());
    }

    ok(root, &["rects", "--pages", "pages", "--images", "images", "--output", "rects"]);
    ok(root, &["--trace", "pipeline", "--pages", "pages", "--heuristic", "--rects", "rects", "--output", "full"]);
    let trace: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("full/trace/synth_0000.json")).unwrap()).unwrap();
    let steps: Vec<u64> = trace.as_array().unwrap().iter().map(|s| s["step"].as_u64().unwrap()).collect();
    assert_eq!(steps, (1..=10).collect::<Vec<_>>());

    std::fs::write(root.join("bad.conf"), "last_step = 11\n").unwrap();
    let out = scanfig(root, &["--config", "bad.conf", "pipeline", "--pages", "pages", "--heuristic", "--rects", "rects", "--output", "o"]);
    assert!(!out.status.success());
}

#[test]
fn eval_reports_every_threshold_and_needs_truth() {
    let dir = corpus(3);
    let root = dir.path();
    ok(root, &["pipeline", "--pages", "pages", "--heuristic", "--images", "images", "--output", "res"]);
    ok(root, &["eval", "--results", "res", "--truths", "truth", "--meta", "meta.csv", "--cutoff-analysis", "--output", "ev"]);
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("ev/report.json")).unwrap()).unwrap();
    let mut th: Vec<f64> = rep["metrics"].as_array().unwrap().iter().map(|m| m["iou_thresh"].as_f64().unwrap()).collect();
    th.sort_by(f64::total_cmp);
    th.dedup();
    assert_eq!(th, vec![0.1, 0.6, 0.8, 0.9]);
    assert!(rep["excess_lost"]["cutoff"].is_number());
    for f in ["metrics.csv", "decades.csv", "excess_lost.csv"] {
        assert!(root.join("ev").join(f).is_file(), "{f}");
    }

    std::fs::remove_file(root.join("truth/synth_0001.json")).unwrap();
    let out = scanfig(root, &["eval", "--results", "res", "--truths", "truth", "--output", "ev2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing truth for page synth_0001"));
}

fn miner_json(labels: &[(&str, &str)]) -> String {
    let items: Vec<serde_json::Value> = labels
        .iter()
        .map(|(t, n)| {
            serde_json::json!({
                "figType": t, "name": n, "page": 0,
                "regionBoundary": {"x1": 10.0, "y1": 10.0, "x2": 100.0, "y2": 100.0},
                "captionBoundary": {"x1": 10.0, "y1": 110.0, "x2": 100.0, "y2": 130.0}
            })
        })
        .collect();
    serde_json::to_string(&items).unwrap()
}

#[test]
fn parsability_two_tools_with_unknown_year() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for tool in ["a", "b"] {
        std::fs::create_dir(root.join(tool)).unwrap();
    }
    std::fs::write(root.join("a/art1.json"), miner_json(&[("Figure", "1"), ("Figure", "2"), ("Table", "I")])).unwrap();
    std::fs::write(root.join("a/art2.json"), miner_json(&[("Figure", "2")])).unwrap();
    std::fs::write(root.join("b/art1.json"), miner_json(&[("Figure", "1")])).unwrap();
    std::fs::write(root.join("b/art2.json"), miner_json(&[("Figure", "1"), ("Figure", "3")])).unwrap();
    std::fs::write(root.join("meta.csv"), "article_id,year\nart1,1954\nart2,\n").unwrap();
    ok(root, &["parsability", "--miner", "a=a", "--miner", "b=b", "--meta", "meta.csv", "--output", "out.csv"]);
    let mut r = csv::Reader::from_path(root.join("out.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let row = |tool: &str, decade: &str| rows.iter().find(|r| &r[0] == tool && &r[1] == decade).cloned();
    assert_eq!(&row("a", "1950").unwrap()[3], "1");
    assert_eq!(&row("a", "unknown").unwrap()[3], "0");
    assert_eq!(&row("b", "all").unwrap()[3], "1");
    assert_eq!(&row("b", "all").unwrap()[2], "2");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = corpus(2);
    let root = dir.path();
    let run = |out: &str| {
        ok(root, &["--jobs", "2", "rects", "--pages", "pages", "--images", "images", "--output", &format!("{out}/r")]);
        ok(root, &["pipeline", "--pages", "pages", "--heuristic", "--rects", &format!("{out}/r"), "--output", &format!("{out}/p")]);
        ok(root, &["eval", "--results", &format!("{out}/p"), "--truths", "truth", "--output", &format!("{out}/e")]);
    };
    run("one");
    run("two");
    for sub in ["r", "p", "e"] {
        let a = files(&root.join("one").join(sub));
        let b = files(&root.join("two").join(sub));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
        }
    }
}

#[test]
fn full_size_pages_run_under_two_seconds_each() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let n = 4;
    ok(root, &["synth", "--output", ".", "--pages", &n.to_string(), "--seed", "5"]);
    ok(root, &["ingest", "--input", "hocr", "--output", "pages"]);
    let t = Instant::now();
    ok(root, &["--jobs", "1", "pipeline", "--pages", "pages", "--heuristic", "--images", "images", "--output", "res"]);
    let per_page = t.elapsed().as_secs_f64() / n as f64;
    assert!(per_page < 2.0, "{per_page:.2}s per page");
    let out = ok(root, &["eval", "--results", "res", "--truths", "truth", "--thresholds", "0.9", "--output", "ev"]);
    assert!(out.lines().all(|l| l.contains("F1 1.0000")), "{out}");
}
