use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Segment, SkeletonSequence};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawLabel {
    Single(u8),
    Multi(Vec<u8>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSequence {
    video_id: String,
    fps: f64,
    label: RawLabel,
    #[serde(default)]
    gt_segments: Option<Vec<[usize; 3]>>,
    frames: Vec<Vec<[f64; 3]>>,
}

fn line_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Line {
        line,
        msg: msg.into(),
    }
}

/// Parses one JSONL record, checking the joint count and label values.
pub fn read_sequence_line(text: &str, line: usize, joints: usize) -> Result<SkeletonSequence> {
    let raw: RawSequence =
        serde_json::from_str(text).map_err(|e| line_err(line, e.to_string()))?;
    if raw.frames.is_empty() {
        return Err(line_err(line, "sequence has no frames"));
    }
    let mut frames = Vec::with_capacity(raw.frames.len() * joints * 3);
    for (t, frame) in raw.frames.iter().enumerate() {
        if frame.len() != joints {
            return Err(line_err(
                line,
                format!("frame {t} has {} joints, expected {joints}", frame.len()),
            ));
        }
        for j in frame {
            if !j.iter().all(|v| v.is_finite()) || !(0.0..=1.0).contains(&j[2]) {
                return Err(line_err(line, format!("frame {t} has an invalid joint {j:?}")));
            }
            frames.extend_from_slice(j);
        }
    }
    let label = match raw.label {
        RawLabel::Single(v) => vec![v],
        RawLabel::Multi(v) => v,
    };
    if label.is_empty() || label.iter().any(|&v| v > 1) {
        return Err(line_err(line, "labels must be 0 or 1"));
    }
    let t = raw.frames.len();
    let gt_segments = match raw.gt_segments {
        None => None,
        Some(segs) => {
            let mut out = Vec::with_capacity(segs.len());
            for [start, end, class] in segs {
                if start < 1 || start > end || end > t || class < 1 || class > label.len() {
                    return Err(line_err(
                        line,
                        format!("segment [{start}, {end}, {class}] outside the video"),
                    ));
                }
                out.push(Segment { start, end, class });
            }
            Some(out)
        }
    };
    if !(raw.fps.is_finite() && raw.fps > 0.0) {
        return Err(line_err(line, "fps must be positive"));
    }
    Ok(SkeletonSequence {
        video_id: raw.video_id,
        fps: raw.fps,
        label,
        gt_segments,
        joints,
        channels: 3,
        frames,
    })
}

pub fn write_sequence_line<W: Write>(out: &mut W, seq: &SkeletonSequence) -> Result<()> {
    let per_frame = seq.joints * seq.channels;
    let raw = RawSequence {
        video_id: seq.video_id.clone(),
        fps: seq.fps,
        label: if seq.label.len() == 1 {
            RawLabel::Single(seq.label[0])
        } else {
            RawLabel::Multi(seq.label.clone())
        },
        gt_segments: seq
            .gt_segments
            .as_ref()
            .map(|s| s.iter().map(|g| [g.start, g.end, g.class]).collect()),
        frames: seq
            .frames
            .chunks(per_frame)
            .map(|f| f.chunks(3).map(|j| [j[0], j[1], j[2]]).collect())
            .collect(),
    };
    serde_json::to_writer(&mut *out, &raw)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Reads every non-blank line of a JSONL stream.
pub fn parse_sequences<R: BufRead>(reader: R, joints: usize) -> Result<Vec<SkeletonSequence>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(read_sequence_line(&line, i + 1, joints)?);
    }
    Ok(out)
}

pub fn load_sequences(path: &Path, joints: usize) -> Result<Vec<SkeletonSequence>> {
    let file = File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    parse_sequences(BufReader::new(file), joints)
}

pub fn save_sequences(path: &Path, data: &[SkeletonSequence]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for seq in data {
        write_sequence_line(&mut out, seq)?;
    }
    out.flush()?;
    Ok(())
}
