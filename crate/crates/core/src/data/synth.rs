use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Segment, SkeletonSequence};
use crate::error::{Error, Result};
use crate::graph::joints::{self, COUNT};

/// Synthetic dataset knobs. Lengths are in frames, amplitudes in trunk
/// lengths and frequencies in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_videos: usize,
    pub frames: usize,
    pub fps: f64,
    pub positive_fraction: f64,
    pub segments_per_positive: (usize, usize),
    pub segment_frames: (usize, usize),
    pub fidget_amplitude: (f64, f64),
    pub fidget_frequency: (f64, f64),
    pub distractor_amplitude: (f64, f64),
    pub distractor_frequency: (f64, f64),
    pub distractor_frames: (usize, usize),
    /// Per-frame Gaussian jitter of every joint.
    pub noise: f64,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_videos: 200,
            frames: 600,
            fps: 20.0,
            positive_fraction: 0.5,
            segments_per_positive: (4, 5),
            segment_frames: (60, 100),
            fidget_amplitude: (0.15, 0.25),
            fidget_frequency: (0.1, 0.3),
            distractor_amplitude: (0.3, 0.5),
            distractor_frequency: (0.03, 0.08),
            distractor_frames: (150, 300),
            noise: 0.002,
            seed: 0,
            id_prefix: "syn".into(),
        }
    }
}

/// Minimum spacing between two segments of one video.
const SEGMENT_GAP: usize = 20;

/// Rest pose in trunk units, neck at the origin, image y pointing down.
const REST_POSE: [[f64; 2]; COUNT] = [
    [0.0, -0.45],
    [0.0, 0.0],
    [-0.4, 0.02],
    [-0.65, 0.35],
    [-0.7, 0.7],
    [0.4, 0.02],
    [0.65, 0.35],
    [0.7, 0.7],
    [-0.22, 1.0],
    [-0.3, 1.5],
    [-0.32, 1.95],
    [0.22, 1.0],
    [0.3, 1.5],
    [0.32, 1.95],
    [-0.1, -0.55],
    [0.1, -0.55],
    [-0.2, -0.5],
    [0.2, -0.5],
];

pub(crate) const LIMB_JOINTS: [usize; 8] = [
    joints::R_ELBOW,
    joints::R_WRIST,
    joints::L_ELBOW,
    joints::L_WRIST,
    joints::R_KNEE,
    joints::R_ANKLE,
    joints::L_KNEE,
    joints::L_ANKLE,
];

const LIMBS: [[usize; 2]; 4] = [
    [joints::R_ELBOW, joints::R_WRIST],
    [joints::L_ELBOW, joints::L_WRIST],
    [joints::R_KNEE, joints::R_ANKLE],
    [joints::L_KNEE, joints::L_ANKLE],
];

impl SynthParams {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synthetic data: {m}")));
        let (smin, smax) = self.segments_per_positive;
        let (lmin, lmax) = self.segment_frames;
        if self.n_videos == 0 || self.frames == 0 {
            return bad("need at least one video and one frame");
        }
        if !(self.fps > 0.0) || !(0.0..=1.0).contains(&self.positive_fraction) {
            return bad("fps must be positive and positive_fraction in [0, 1]");
        }
        if smin < 1 || smin > smax || lmin < 1 || lmin > lmax {
            return bad("segment ranges must be non-empty and start at 1");
        }
        if smax * (lmax + SEGMENT_GAP) > self.frames {
            return bad("segments do not fit in the video");
        }
        let (dmin, dmax) = self.distractor_frames;
        if dmin < 1 || dmin > dmax || dmax > self.frames {
            return bad("distractor length range does not fit in the video");
        }
        let ranges = [
            self.fidget_amplitude,
            self.fidget_frequency,
            self.distractor_amplitude,
            self.distractor_frequency,
        ];
        if ranges.iter().any(|&(a, b)| !(a >= 0.0 && a <= b && b.is_finite())) || !(self.noise >= 0.0) {
            return bad("amplitude, frequency and noise ranges must be ordered and non-negative");
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Raised-cosine envelope over `[start, end)` with short ramps at each end.
fn envelope(t: usize, start: usize, end: usize) -> f64 {
    if t < start || t >= end {
        return 0.0;
    }
    let ramp = ((end - start) / 8).clamp(1, 10) as f64;
    let d = ((t - start) as f64 + 0.5).min((end - t) as f64 - 0.5);
    if d >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (std::f64::consts::PI * d / ramp).cos()
    }
}

/// Two sinusoids per axis per limb joint, independent phases.
struct Oscillator {
    joint: usize,
    axis: usize,
    amp: f64,
    omega: f64,
    phase: f64,
}

/// Splits the video into `k` equal strata and places one segment uniformly
/// inside each, so episodes recur through the whole video.
fn place_segments<R: Rng>(rng: &mut R, p: &SynthParams) -> Vec<(usize, usize)> {
    let k = rng.random_range(p.segments_per_positive.0..=p.segments_per_positive.1);
    let stratum = p.frames / k;
    (0..k)
        .map(|i| {
            let len = rng.random_range(p.segment_frames.0..=p.segment_frames.1);
            let start = i * stratum + rng.random_range(0..=stratum - len - SEGMENT_GAP);
            (start, start + len)
        })
        .collect()
}

fn make_video(index: usize, positive: bool, p: &SynthParams) -> Result<SkeletonSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(index as u64 + 1);
    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::config(e.to_string()));
    let jitter = normal(p.noise)?;
    let offset = normal(0.03)?;

    let trunk: f64 = rng.random_range(80.0..120.0);
    let centre = [rng.random_range(280.0..360.0), rng.random_range(150.0..230.0)];
    let pose: Vec<[f64; 2]> = REST_POSE
        .iter()
        .map(|&[x, y]| [x + offset.sample(&mut rng), y + offset.sample(&mut rng)])
        .collect();
    let drift_amp = [rng.random_range(0.0..0.1), rng.random_range(0.0..0.1)];
    let drift_omega = 2.0 * std::f64::consts::PI * rng.random_range(0.01..0.03) / p.fps;
    let drift_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);

    let mut segments = Vec::new();
    let mut oscillators = Vec::new();
    let mut distractor = None;
    if positive {
        segments = place_segments(&mut rng, p);
        for &joint in &LIMB_JOINTS {
            for axis in 0..2 {
                for _ in 0..2 {
                    oscillators.push(Oscillator {
                        joint,
                        axis,
                        amp: uniform(&mut rng, p.fidget_amplitude) / 2.0,
                        omega: 2.0 * std::f64::consts::PI * uniform(&mut rng, p.fidget_frequency)
                            / p.fps,
                        phase: rng.random_range(0.0..std::f64::consts::TAU),
                    });
                }
            }
        }
    } else {
        let limb = LIMBS[rng.random_range(0..LIMBS.len())];
        let len = rng.random_range(p.distractor_frames.0..=p.distractor_frames.1);
        let start = rng.random_range(0..=p.frames - len);
        let amp = uniform(&mut rng, p.distractor_amplitude);
        let omega = 2.0 * std::f64::consts::PI * uniform(&mut rng, p.distractor_frequency) / p.fps;
        let dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        distractor = Some((limb, start, start + len, amp, omega, dir, phase));
    }

    let mut frames = Vec::with_capacity(p.frames * COUNT * 3);
    for t in 0..p.frames {
        let tf = t as f64;
        let mut pos = pose.clone();
        let gate: f64 = segments.iter().map(|&(s, e)| envelope(t, s, e)).sum();
        if gate > 0.0 {
            for o in &oscillators {
                pos[o.joint][o.axis] += gate * o.amp * (o.omega * tf + o.phase).sin();
            }
        }
        if let Some((limb, s, e, amp, omega, dir, phase)) = distractor {
            let g = envelope(t, s, e);
            if g > 0.0 {
                let swing = g * amp * (omega * (tf - s as f64) + phase).sin();
                for (k, &j) in limb.iter().enumerate() {
                    // the distal joint swings further than the proximal one
                    let reach = 0.6 + 0.4 * k as f64;
                    pos[j][0] += reach * swing * dir.cos();
                    pos[j][1] += reach * swing * dir.sin();
                }
            }
        }
        for q in &pos {
            for axis in 0..2 {
                let drift = drift_amp[axis] * (drift_omega * tf + drift_phase + axis as f64).sin();
                let v = centre[axis] + trunk * (q[axis] + drift + jitter.sample(&mut rng));
                frames.push((v * 100.0).round() / 100.0);
            }
            let conf: f64 = rng.random_range(0.5..=1.0);
            frames.push((conf * 1000.0).round() / 1000.0);
        }
    }
    Ok(SkeletonSequence {
        video_id: format!("{}{index:04}", p.id_prefix),
        fps: p.fps,
        label: vec![u8::from(positive)],
        gt_segments: Some(
            segments
                .iter()
                .map(|&(s, e)| Segment {
                    start: s + 1,
                    end: e,
                    class: 1,
                })
                .collect(),
        ),
        joints: COUNT,
        channels: 3,
        frames,
    })
}

/// Deterministic synthetic dataset. Positive videos carry one or more
/// segments of small multi-directional limb oscillation; negative videos
/// carry one large slow limb swing instead.
pub fn synthesize(params: &SynthParams) -> Result<Vec<SkeletonSequence>> {
    params.validate()?;
    let positives = (params.n_videos as f64 * params.positive_fraction).round() as usize;
    let mut labels: Vec<bool> = (0..params.n_videos).map(|i| i < positives).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    labels.shuffle(&mut rng);
    labels
        .iter()
        .enumerate()
        .map(|(i, &pos)| make_video(i, pos, params))
        .collect()
}
