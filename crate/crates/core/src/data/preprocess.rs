use super::SkeletonSequence;
use crate::error::{Error, Result};
use crate::graph::joints::{L_HIP, NECK, R_HIP};

/// Median neck-to-mid-hip distance over frames where the neck and both hips
/// were detected. The lower median is used for even counts.
pub fn trunk_scale(seq: &SkeletonSequence, frames: usize) -> Option<f64> {
    let c = seq.channels;
    let mut lengths: Vec<f64> = (0..frames)
        .filter_map(|t| {
            let f = seq.frame(t);
            let j = |n: usize| &f[n * c..n * c + 3];
            let (neck, rh, lh) = (j(NECK), j(R_HIP), j(L_HIP));
            if neck[2] > 0.0 && rh[2] > 0.0 && lh[2] > 0.0 {
                let mx = 0.5 * (rh[0] + lh[0]);
                let my = 0.5 * (rh[1] + lh[1]);
                Some((mx - neck[0]).hypot(my - neck[1]))
            } else {
                None
            }
        })
        .collect();
    if lengths.is_empty() {
        return None;
    }
    lengths.sort_by(f64::total_cmp);
    Some(lengths[(lengths.len() - 1) / 2])
}

/// Truncates or zero-pads to `max_frames`, then centres every frame on the
/// neck and divides coordinates by the median trunk length.
///
/// Undetected joints (confidence 0) are placed at the origin; a frame
/// without a detected neck has all coordinates zeroed. A scale within 1e-9
/// of 1 is treated as exactly 1 so that the operation is idempotent.
pub fn preprocess(seq: &SkeletonSequence, max_frames: usize) -> Result<SkeletonSequence> {
    if seq.joints <= L_HIP.max(R_HIP) || seq.channels != 3 {
        return Err(Error::data(format!(
            "{}: preprocessing needs the 18-joint layout with (x, y, confidence)",
            seq.video_id
        )));
    }
    let valid = seq.num_frames().min(max_frames);
    if valid == 0 {
        return Err(Error::data(format!("{}: no frames", seq.video_id)));
    }
    let any_joint = (0..valid).any(|t| seq.frame(t).chunks(3).any(|j| j[2] > 0.0));
    if !any_joint {
        return Err(Error::data(format!("{}: no detected joints", seq.video_id)));
    }
    let scale = trunk_scale(seq, valid)
        .ok_or_else(|| Error::data(format!("{}: no frame shows neck and hips", seq.video_id)))?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::data(format!("{}: degenerate trunk length", seq.video_id)));
    }
    let scale = if (scale - 1.0).abs() < 1e-9 { 1.0 } else { scale };

    let per_frame = seq.joints * 3;
    let mut frames = vec![0.0; max_frames * per_frame];
    for t in 0..valid {
        let src = seq.frame(t);
        let dst = &mut frames[t * per_frame..(t + 1) * per_frame];
        let neck = &src[NECK * 3..NECK * 3 + 3];
        let (nx, ny, has_neck) = (neck[0], neck[1], neck[2] > 0.0);
        for (d, s) in dst.chunks_mut(3).zip(src.chunks(3)) {
            d[2] = s[2];
            if has_neck && s[2] > 0.0 {
                d[0] = (s[0] - nx) / scale;
                d[1] = (s[1] - ny) / scale;
            }
        }
    }
    Ok(SkeletonSequence {
        frames,
        ..seq.clone()
    })
}
