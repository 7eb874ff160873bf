//! Skeleton sequences: JSONL storage, preprocessing and a synthetic generator.

mod io;
mod preprocess;
mod synth;

pub use io::{load_sequences, parse_sequences, read_sequence_line, save_sequences, write_sequence_line};
pub use preprocess::{preprocess, trunk_scale};
pub use synth::{synthesize, SynthParams};

use serde::{Deserialize, Serialize};

/// Annotated action interval, 1-based inclusive frame bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

/// One video's keypoints, `T×N×C` row-major, with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub video_id: String,
    pub fps: f64,
    /// One 0/1 flag per action class.
    pub label: Vec<u8>,
    pub gt_segments: Option<Vec<Segment>>,
    pub joints: usize,
    pub channels: usize,
    pub frames: Vec<f64>,
}

impl SkeletonSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.len() / (self.joints * self.channels)
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.joints * self.channels;
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn is_positive(&self) -> bool {
        self.label.contains(&1)
    }
}
