pub mod eval;
pub mod features;
pub mod geometry;
pub mod hocr;
pub mod mining;
pub mod postprocess;
pub mod rects;
pub mod synth;
