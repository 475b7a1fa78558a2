//! Synthetic scanned pages with known figure and caption geometry.
//!
//! A page is a white sheet with paragraphs of placeholder words, zero to two
//! framed plots, and a "Figure N." caption under each frame. The generator
//! returns the rendered image, an hOCR transcript of every word, and the
//! ground truth under the annotation rules: the figure box is the frame
//! grown down to the caption top and out to the caption's left and right
//! edges; the caption box is the hull of its words.

use image::{GrayImage, Luma};
use imageproc::drawing::{draw_filled_circle_mut, draw_filled_rect_mut};
use imageproc::rect::Rect;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::GroundTruth;
use crate::geometry::BBox;
use crate::hocr::{Page, Rotation, Word, DEFAULT_DPI};
use crate::postprocess::{is_keyword, DetClass, PipelineConfig};

const VOCAB: &[&str] = &[
    "lorem", "ipsum", "dolor", "sit", "amet", "consectetur", "adipiscing", "elit", "sed", "do", "eiusmod", "tempor",
    "incididunt", "ut", "labore", "et", "dolore", "magna", "aliqua", "enim", "ad", "minim", "veniam", "quis", "nostrud",
    "exercitation", "ullamco", "laboris", "nisi", "aliquip", "ex", "ea", "commodo", "consequat", "duis", "aute", "irure",
    "in", "reprehenderit", "voluptate", "velit", "esse", "cillum", "eu", "fugiat", "nulla", "pariatur", "excepteur",
    "sint", "occaecat", "cupidatat", "non", "proident", "sunt", "culpa", "qui", "officia", "deserunt", "mollit", "anim",
    "id", "est", "laborum", "12.5", "(3)", "0.04",
];
const CAPTION_KEYWORDS: &[&str] = &["Figure", "Fig.", "FIG.", "Plate"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub max_figures: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 2550,
            height: 3300,
            max_figures: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthPage {
    pub id: String,
    pub year: i32,
    pub page: Page,
    pub image: GrayImage,
    pub hocr: String,
    pub truths: Vec<GroundTruth>,
    /// Outer bounds of each drawn frame.
    pub frames: Vec<BBox>,
}

/// A block of words that becomes one hOCR paragraph.
struct Block {
    lines: Vec<Vec<Word>>,
}

impl Block {
    fn bbox(&self) -> Option<BBox> {
        self.lines.iter().flatten().map(|w| w.bbox).reduce(|a, b| a.expand_to_include(&b))
    }
}

struct Layout {
    scale: f64,
    rng: ChaCha8Rng,
    vocab: Vec<&'static str>,
}

impl Layout {
    fn px(&self, v: f64) -> f64 {
        (v * self.scale).round()
    }

    fn word_h(&self) -> f64 {
        self.px(32.0)
    }

    fn line_h(&self) -> f64 {
        self.px(48.0)
    }

    fn word(&mut self, text: &str, x: f64, y: f64) -> Word {
        let w = self.px(18.0) * text.chars().count() as f64;
        Word {
            bbox: BBox::new(x, y, x + w, y + self.word_h()).expect("positive word size"),
            text: text.to_string(),
            confidence: self.rng.random_range(85..=99) as f64,
            fontsize: self.word_h(),
            ascenders: self.px(8.0),
            descenders: self.px(8.0),
            rotation: Rotation::Deg0,
        }
    }

    /// Flow `texts` into lines between `x0` and `x1` from `y`.
    fn flow(&mut self, texts: &[String], x0: f64, x1: f64, y: f64) -> Block {
        let gap = self.px(16.0);
        let mut lines: Vec<Vec<Word>> = vec![Vec::new()];
        let (mut x, mut y) = (x0, y);
        for t in texts {
            let w = self.word(t, x, y);
            if w.bbox.x1() > x1 && !lines.last().unwrap().is_empty() {
                y += self.line_h();
                x = x0;
                lines.push(Vec::new());
            }
            let w = self.word(t, x, y);
            x = w.bbox.x1() + gap;
            lines.last_mut().unwrap().push(w);
        }
        Block { lines }
    }

    fn filler(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.vocab[self.rng.random_range(0..self.vocab.len())].to_string()).collect()
    }

    /// Paragraph of exactly `n_lines` full lines between `x0` and `x1`.
    fn paragraph(&mut self, n_lines: usize, x0: f64, x1: f64, y: f64) -> Block {
        let mut texts = Vec::new();
        loop {
            texts.extend(self.filler(8));
            let block = self.flow(&texts, x0, x1, y);
            if block.lines.len() > n_lines {
                let mut block = block;
                block.lines.truncate(n_lines);
                return block;
            }
        }
    }
}

fn draw_words(image: &mut GrayImage, words: &[Word], rng: &mut ChaCha8Rng) {
    for w in words {
        let n = w.text.chars().count().max(1);
        let cw = w.bbox.width() / n as f64;
        for i in 0..n {
            let gx0 = w.bbox.x0() + i as f64 * cw + cw * 0.15;
            let gw = (cw * 0.7).max(1.0);
            let top = w.bbox.y0() + w.bbox.height() * rng.random_range(0.0..0.35);
            let gh = (w.bbox.y1() - top - 1.0).max(1.0);
            draw_filled_rect_mut(
                image,
                Rect::at(gx0 as i32, top as i32).of_size(gw as u32, gh as u32),
                Luma([rng.random_range(10..60)]),
            );
        }
    }
}

fn draw_frame(image: &mut GrayImage, b: &BBox, thick: u32) {
    let (x0, y0) = (b.x0() as i32, b.y0() as i32);
    let (w, h) = (b.width() as u32, b.height() as u32);
    let ink = Luma([0]);
    draw_filled_rect_mut(image, Rect::at(x0, y0).of_size(w, thick), ink);
    draw_filled_rect_mut(image, Rect::at(x0, y0 + h as i32 - thick as i32).of_size(w, thick), ink);
    draw_filled_rect_mut(image, Rect::at(x0, y0).of_size(thick, h), ink);
    draw_filled_rect_mut(image, Rect::at(x0 + w as i32 - thick as i32, y0).of_size(thick, h), ink);
}

/// A wavy curve and scattered markers well inside the frame.
fn draw_plot(image: &mut GrayImage, b: &BBox, inset: f64, rng: &mut ChaCha8Rng) {
    let (x0, x1) = (b.x0() + inset, b.x1() - inset);
    let (y0, y1) = (b.y0() + inset, b.y1() - 2.0 * inset);
    if x1 - x0 < 10.0 || y1 - y0 < 10.0 {
        return;
    }
    let periods = rng.random_range(1.5..3.5);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mid = (y0 + y1) / 2.0;
    let amp = (y1 - y0) * 0.3;
    let mut x = x0;
    while x <= x1 {
        let t = (x - x0) / (x1 - x0);
        let y = mid + amp * (std::f64::consts::TAU * periods * t + phase).sin();
        draw_filled_circle_mut(image, (x as i32, y as i32), 2, Luma([20]));
        x += 2.0;
    }
    for _ in 0..rng.random_range(5..20) {
        let cx = rng.random_range(x0..x1);
        let cy = rng.random_range(y0..y1);
        draw_filled_circle_mut(image, (cx as i32, cy as i32), 5, Luma([40]));
    }
}

fn hocr_bbox(b: &BBox) -> String {
    format!("bbox {} {} {} {}", b.x0() as i64, b.y0() as i64, b.x1() as i64, b.y1() as i64)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn to_hocr(id: &str, width: u32, height: u32, blocks: &[Block]) -> String {
    let mut out = String::new();
    out.push_str(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <!DOCTYPE html PUBLIC \"-//W3C//DTD XHTML 1.0 Transitional//EN\"\n    \
         \"http://www.w3.org/TR/xhtml1/DTD/xhtml1-transitional.dtd\">\n\
         <html xmlns=\"http://www.w3.org/1999/xhtml\" xml:lang=\"en\" lang=\"en\">\n \
         <head>\n  <title></title>\n  <meta name='ocr-system' content='scanfig-synth' />\n </head>\n <body>\n",
    );
    out.push_str(&format!(
        "  <div class='ocr_page' id='page_1' title='image \"{id}.png\"; bbox 0 0 {width} {height}; ppageno 0'>\n"
    ));
    let mut word_no = 0;
    for (bi, block) in blocks.iter().enumerate() {
        let Some(bb) = block.bbox() else { continue };
        let t = hocr_bbox(&bb);
        out.push_str(&format!("   <div class='ocr_carea' id='block_1_{}' title=\"{t}\">\n", bi + 1));
        out.push_str(&format!("    <p class='ocr_par' id='par_1_{}' lang='eng' title=\"{t}\">\n", bi + 1));
        for (li, line) in block.lines.iter().enumerate() {
            let Some(lb) = line.iter().map(|w| w.bbox).reduce(|a, b| a.expand_to_include(&b)) else {
                continue;
            };
            let first = &line[0];
            out.push_str(&format!(
                "     <span class='ocr_line' id='line_1_{}_{}' title=\"{}; baseline 0 -{}; x_size {}; x_descenders {}; x_ascenders {}\">\n",
                bi + 1,
                li + 1,
                hocr_bbox(&lb),
                first.descenders,
                first.bbox.height(),
                first.descenders,
                first.ascenders,
            ));
            for w in line {
                word_no += 1;
                out.push_str(&format!(
                    "      <span class='ocrx_word' id='word_1_{word_no}' title='{}; x_wconf {}'>{}</span>\n",
                    hocr_bbox(&w.bbox),
                    w.confidence,
                    escape(&w.text)
                ));
            }
            out.push_str("     </span>\n");
        }
        out.push_str("    </p>\n   </div>\n");
    }
    out.push_str("  </div>\n </body>\n</html>\n");
    out
}

/// Page `index` of the corpus generated from `seed`.
pub fn generate_page(cfg: &SynthConfig, seed: u64, index: usize) -> SynthPage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let keywords = PipelineConfig::default().keywords;
    let vocab: Vec<&'static str> = VOCAB.iter().copied().filter(|w| !is_keyword(w, &keywords, 1)).collect();
    let mut lay = Layout {
        scale: cfg.width as f64 / 2550.0,
        rng: ChaCha8Rng::seed_from_u64(rng.random()),
        vocab,
    };
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let margin = lay.px(200.0);
    let (left, right) = (margin, w - margin);
    let text_w = right - left;
    let block_sep = lay.px(140.0);

    let n_fig = match rng.random_range(0..20) {
        0..3 => 0,
        3..14 => 1,
        _ => 2,
    }
    .min(cfg.max_figures);

    // Plan figure blocks: frame size, caption gap and caption length.
    struct FigPlan {
        frame_w: f64,
        frame_h: f64,
        frame_x: f64,
        cap_gap: f64,
        cap_x0: f64,
        cap_x1: f64,
        cap_words: usize,
        thick: u32,
    }
    let plans: Vec<FigPlan> = (0..n_fig)
        .map(|_| {
            let frame_w = (text_w * rng.random_range(0.45..1.0)).round();
            let frame_h = lay.px(rng.random_range(450.0..900.0));
            let frame_x = (left + rng.random_range(0.0..=(text_w - frame_w))).round();
            let cap_x0 = (frame_x + lay.px(rng.random_range(-80.0..80.0))).clamp(left, right - lay.px(400.0));
            let cap_x1 = (cap_x0 + frame_w * rng.random_range(0.6..1.2)).clamp(cap_x0 + lay.px(400.0), right);
            FigPlan {
                frame_w,
                frame_h,
                frame_x,
                cap_gap: lay.px(rng.random_range(20.0..70.0)),
                cap_x0,
                cap_x1,
                cap_words: rng.random_range(4..30),
                thick: rng.random_range(3..=6),
            }
        })
        .collect();
    let cap_lines_max = 4.0;
    let fig_height: f64 = plans.iter().map(|p| p.frame_h + p.cap_gap + cap_lines_max * lay.line_h()).sum();
    let n_par = n_fig + 1;
    let avail = h - 2.0 * margin - fig_height - 2.0 * block_sep * n_fig as f64;
    let total_lines = (avail / lay.line_h()).floor().max(0.0) as usize;
    let mut par_lines = vec![0usize; n_par];
    for _ in 0..total_lines {
        par_lines[rng.random_range(0..n_par)] += 1;
    }

    let mut image = GrayImage::from_pixel(cfg.width, cfg.height, Luma([255]));
    let mut blocks: Vec<Block> = Vec::new();
    let mut truths = Vec::new();
    let mut frames = Vec::new();
    let mut y = margin;
    for (i, lines) in par_lines.iter().enumerate() {
        if *lines > 0 {
            let block = lay.paragraph(*lines, left, right, y);
            y = block.bbox().map_or(y, |b| b.y1());
            blocks.push(block);
        }
        let Some(p) = plans.get(i) else { break };
        y += block_sep;
        let frame = BBox::new(p.frame_x, y, p.frame_x + p.frame_w, y + p.frame_h).expect("frame fits");
        draw_frame(&mut image, &frame, p.thick);
        let inset = lay.px(50.0);
        draw_plot(&mut image, &frame, inset, &mut lay.rng);
        // Tick labels along the inside bottom of the frame.
        let label_y = frame.y1() - inset - lay.word_h();
        let n_labels = (frame.width() / lay.px(300.0)).floor() as usize;
        let labels: Vec<Word> = (0..n_labels)
            .map(|k| {
                let text = format!("{}", k * 10);
                lay.word(&text, frame.x0() + inset + k as f64 * lay.px(300.0), label_y)
            })
            .collect();
        if !labels.is_empty() {
            blocks.push(Block { lines: vec![labels] });
        }

        let cap_y = frame.y1() + p.cap_gap;
        let mut texts = vec![CAPTION_KEYWORDS[lay.rng.random_range(0..CAPTION_KEYWORDS.len())].to_string(), format!("{}.", i + 1)];
        texts.extend(lay.filler(p.cap_words));
        let mut cap = lay.flow(&texts, p.cap_x0, p.cap_x1, cap_y);
        cap.lines.truncate(cap_lines_max as usize);
        let cap_box = cap.bbox().expect("caption has words");
        let fig_box = BBox::new(frame.x0().min(cap_box.x0()), frame.y0(), frame.x1().max(cap_box.x1()), cap_box.y0()).expect("valid figure");
        truths.push(GroundTruth {
            bbox: fig_box,
            cls: DetClass::Figure,
        });
        truths.push(GroundTruth {
            bbox: cap_box,
            cls: DetClass::FigureCaption,
        });
        frames.push(frame);
        y = cap_box.y1() + block_sep;
        blocks.push(cap);
    }

    let words: Vec<Word> = blocks.iter().flat_map(|b| b.lines.iter().flatten().cloned()).collect();
    draw_words(&mut image, &words, &mut lay.rng);
    let id = format!("synth_{index:04}");
    let hocr = to_hocr(&id, cfg.width, cfg.height, &blocks);
    let regions = blocks
        .iter()
        .filter_map(|b| b.bbox())
        .flat_map(|bb| {
            [crate::hocr::RegionKind::Carea, crate::hocr::RegionKind::Paragraph]
                .map(|kind| crate::hocr::Region { bbox: bb, kind })
        })
        .collect();
    SynthPage {
        year: 1900 + rng.random_range(0..100),
        page: Page {
            source_id: id.clone(),
            width_px: cfg.width,
            height_px: cfg.height,
            rotation_deg: Rotation::Deg0,
            words,
            regions,
            dpi_effective: DEFAULT_DPI,
        },
        id,
        image,
        hocr,
        truths,
        frames,
    }
}

pub fn generate_corpus(cfg: &SynthConfig, seed: u64, n: usize) -> Vec<SynthPage> {
    (0..n).map(|i| generate_page(cfg, seed, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hocr::parse_hocr;

    fn small() -> SynthConfig {
        SynthConfig {
            width: 1275,
            height: 1650,
            max_figures: 2,
        }
    }

    #[test]
    fn hocr_round_trips_to_the_same_page() {
        for i in 0..5 {
            let s = generate_page(&small(), 7, i);
            let parsed = parse_hocr(s.hocr.as_bytes(), &s.id).unwrap();
            assert_eq!(parsed, s.page, "page {i}");
        }
    }

    #[test]
    fn deterministic_per_seed_and_index() {
        let a = generate_page(&small(), 3, 2);
        let b = generate_page(&small(), 3, 2);
        assert_eq!(a.hocr, b.hocr);
        assert_eq!(a.image, b.image);
        assert_ne!(generate_page(&small(), 4, 2).hocr, a.hocr);
    }

    #[test]
    fn layout_stays_on_page_and_apart() {
        for i in 0..30 {
            let s = generate_page(&SynthConfig::default(), 11, i);
            let page = BBox::new(0.0, 0.0, 2550.0, 3300.0).unwrap();
            assert!(s.page.words.iter().all(|w| page.contains(&w.bbox)), "page {i}");
            assert_eq!(s.truths.len(), 2 * s.frames.len());
            for pair in s.truths.chunks(2) {
                let (fig, cap) = (pair[0].bbox, pair[1].bbox);
                assert_eq!(fig.y1(), cap.y0());
                assert!(page.contains(&fig) && page.contains(&cap));
                // No body word lies within two word heights of the caption.
                let near = BBox::new(cap.x0(), cap.y0() - 64.0, cap.x1(), cap.y1() + 64.0).unwrap();
                let stray = s.page.words.iter().filter(|w| near.overlaps(&w.bbox) && !cap.contains(&w.bbox) && !fig.contains(&w.bbox));
                assert_eq!(stray.count(), 0, "page {i}");
            }
        }
    }
}
