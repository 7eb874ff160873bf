//! Video classification metrics, temporal detection AP, early-observation
//! curves and the combined evaluation report.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{preprocess, Segment, SkeletonSequence};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::oamb::{extract_instances, prefix_video_prob, DetectionInstance};

/// IoU thresholds of the detection benchmark.
pub const IOU_THRESHOLDS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub f1: f64,
    /// `None` when only one class is present among the labels.
    pub auc: Option<f64>,
}

/// Area under the ROC curve from the rank-sum statistic, ties sharing the
/// average rank.
pub fn auc(probs: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && probs[order[j + 1]] == probs[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Accuracy and positive-class F1 at `threshold` (strictly greater counts as
/// positive), plus AUC.
pub fn classification_metrics(probs: &[f64], labels: &[u8], threshold: f64) -> Result<ClassificationMetrics> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::data(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::data("labels must be 0 or 1"));
    }
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        let pred = p > threshold;
        match (pred, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        correct += usize::from(pred == (y == 1));
    }
    let denom = 2 * tp + fp + fneg;
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / probs.len() as f64,
        f1: if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 },
        auc: auc(probs, labels),
    })
}

/// Intersection over union of two inclusive frame intervals.
pub fn temporal_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    let inter = if hi >= lo { hi - lo + 1 } else { 0 };
    let union = (a.1 - a.0 + 1) + (b.1 - b.0 + 1) - inter;
    inter as f64 / union as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredInterval {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// Predictions and ground truth of one video.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VideoDetections {
    pub predictions: Vec<ScoredInterval>,
    pub ground_truth: Vec<(usize, usize)>,
}

/// AP over predictions pooled from several videos; each prediction can only
/// match ground truth of its own video.
///
/// Predictions are visited by descending score (ties keep input order). A
/// prediction is a true positive when its best-IoU unmatched ground truth
/// (lower index on ties) reaches `iou_threshold`; that segment is consumed.
/// AP is the sum of precision at true-positive ranks over the number of
/// ground-truth segments. With no ground truth, AP is 1 if there are also no
/// predictions and 0 otherwise.
pub fn average_precision_pooled(videos: &[VideoDetections], iou_threshold: f64) -> f64 {
    let n_gt: usize = videos.iter().map(|v| v.ground_truth.len()).sum();
    let mut preds: Vec<(usize, ScoredInterval)> = videos
        .iter()
        .enumerate()
        .flat_map(|(v, d)| d.predictions.iter().map(move |&p| (v, p)))
        .collect();
    if n_gt == 0 {
        return if preds.is_empty() { 1.0 } else { 0.0 };
    }
    preds.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
    let mut used: Vec<Vec<bool>> = videos
        .iter()
        .map(|v| vec![false; v.ground_truth.len()])
        .collect();
    let (mut tp, mut sum) = (0usize, 0.0);
    for (rank, (v, p)) in preds.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, &seg) in videos[*v].ground_truth.iter().enumerate() {
            if used[*v][g] {
                continue;
            }
            let iou = temporal_iou((p.start, p.end), seg);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, iou)) = best {
            if iou >= iou_threshold {
                used[*v][g] = true;
                tp += 1;
                sum += tp as f64 / (rank + 1) as f64;
            }
        }
    }
    sum / n_gt as f64
}

/// AP of one video's predictions.
pub fn average_precision(predictions: &[ScoredInterval], ground_truth: &[(usize, usize)], iou_threshold: f64) -> f64 {
    average_precision_pooled(
        &[VideoDetections {
            predictions: predictions.to_vec(),
            ground_truth: ground_truth.to_vec(),
        }],
        iou_threshold,
    )
}

/// Number of leading clips observed at `fraction` of a video of `clips` clips.
pub fn observed_clips(fraction: f64, clips: usize) -> usize {
    ((fraction * clips as f64 - 1e-9).ceil() as usize).clamp(1, clips)
}

/// AUC from prefix probabilities at each observed fraction. `timelines`
/// holds one class's per-clip online probability for every video.
pub fn early_observation_curve(
    timelines: &[Vec<f64>],
    labels: &[u8],
    fractions: &[f64],
    kappa: usize,
) -> Result<Vec<(f64, Option<f64>)>> {
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config(format!("fraction {f} outside (0, 1]")));
            }
            let probs = timelines
                .iter()
                .map(|t| prefix_video_prob(t, observed_clips(f, t.len()), kappa))
                .collect::<Result<Vec<_>>>()?;
            Ok((f, auc(&probs, labels)))
        })
        .collect()
}

/// Per-video inference output kept in the report for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoResult {
    pub video_id: String,
    pub label: Vec<u8>,
    /// Full-video online probability per action class.
    pub video_prob: Vec<f64>,
    /// Frames before padding.
    pub frames: usize,
    /// `(start_frame, end_frame)` of every clip.
    pub windows: Vec<(usize, usize)>,
    /// Online probabilities per clip, background first.
    pub clip_probs: Vec<Vec<f64>>,
    pub gt_segments: Option<Vec<Segment>>,
    pub instances: Vec<DetectionInstance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    /// AP keyed by IoU threshold (`"0.1"` ... `"0.5"`).
    pub map_at: BTreeMap<String, f64>,
    pub mean_map: f64,
    pub instance_count: usize,
    pub early_curve: Vec<(f64, Option<f64>)>,
    pub videos: Vec<VideoResult>,
}

/// Online scores and detection instances of one raw video.
pub fn infer_video(model: &Model, seq: &SkeletonSequence, instance_threshold: f64) -> Result<VideoResult> {
    let cfg = model.config();
    let processed = preprocess(seq, cfg.max_frames)?;
    let timeline = model.timeline(model.clips(&processed.frames)?)?;
    let window = model.windowing();
    let clips = timeline.rows();
    let valid_frames = seq.num_frames().min(cfg.max_frames);
    // clips made only of padding never yield instances
    let live = (0..clips)
        .take_while(|&i| window.frame_range(i).0 <= valid_frames)
        .count();
    let mut video_prob = Vec::with_capacity(cfg.n_c);
    let mut instances = Vec::new();
    for c in 1..=cfg.n_c {
        let col: Vec<f64> = (0..clips).map(|i| timeline.row(i)[c]).collect();
        video_prob.push(prefix_video_prob(&col, clips, cfg.kappa)?);
        instances.extend(extract_instances(&col[..live], c, instance_threshold, window));
    }
    Ok(VideoResult {
        video_id: seq.video_id.clone(),
        label: seq.label.clone(),
        video_prob,
        frames: valid_frames,
        windows: (0..clips).map(|i| window.frame_range(i)).collect(),
        clip_probs: (0..clips).map(|i| timeline.row(i).to_vec()).collect(),
        gt_segments: seq.gt_segments.clone(),
        instances,
    })
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Full evaluation over a labelled dataset.
pub fn evaluate(
    model: &Model,
    dataset: &[SkeletonSequence],
    fractions: &[f64],
    instance_threshold: f64,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::data("evaluation dataset is empty"));
    }
    let cfg = model.config();
    let videos = dataset
        .iter()
        .map(|s| infer_video(model, s, instance_threshold))
        .collect::<Result<Vec<_>>>()?;
    for v in &videos {
        if v.label.len() != cfg.n_c {
            return Err(Error::data(format!(
                "{}: {} labels for {} classes",
                v.video_id,
                v.label.len(),
                cfg.n_c
            )));
        }
    }

    let mut per_class = Vec::with_capacity(cfg.n_c);
    let mut curves = Vec::with_capacity(cfg.n_c);
    let mut aps: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for c in 1..=cfg.n_c {
        let probs: Vec<f64> = videos.iter().map(|v| v.video_prob[c - 1]).collect();
        let labels: Vec<u8> = videos.iter().map(|v| v.label[c - 1]).collect();
        per_class.push(classification_metrics(&probs, &labels, 0.5)?);
        let cols: Vec<Vec<f64>> = videos
            .iter()
            .map(|v| v.clip_probs.iter().map(|row| row[c]).collect())
            .collect();
        curves.push(early_observation_curve(&cols, &labels, fractions, cfg.kappa)?);

        let annotated: Vec<VideoDetections> = videos
            .iter()
            .filter(|v| v.label[c - 1] == 1)
            .filter_map(|v| {
                let gt = v.gt_segments.as_ref()?;
                Some(VideoDetections {
                    predictions: v
                        .instances
                        .iter()
                        .filter(|i| i.class == c)
                        .map(|i| ScoredInterval {
                            start: i.start_frame,
                            end: i.end_frame,
                            score: i.score,
                        })
                        .collect(),
                    ground_truth: gt
                        .iter()
                        .filter(|g| g.class == c)
                        .map(|g| (g.start, g.end))
                        .collect(),
                })
            })
            .collect();
        if !annotated.is_empty() {
            for (t, &thr) in IOU_THRESHOLDS.iter().enumerate() {
                aps.entry(t).or_default().push(average_precision_pooled(&annotated, thr));
            }
        }
    }

    let map_at: BTreeMap<String, f64> = IOU_THRESHOLDS
        .iter()
        .enumerate()
        .map(|(t, thr)| (format!("{thr:.1}"), aps.get(&t).map_or(0.0, |v| mean(v))))
        .collect();
    let mean_map = mean(&map_at.values().copied().collect::<Vec<_>>());
    let aucs: Vec<f64> = per_class.iter().filter_map(|m| m.auc).collect();
    let early_curve = fractions
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let defined: Vec<f64> = curves.iter().filter_map(|c| c[i].1).collect();
            (f, (!defined.is_empty()).then(|| mean(&defined)))
        })
        .collect();
    Ok(EvalReport {
        accuracy: mean(&per_class.iter().map(|m| m.accuracy).collect::<Vec<_>>()),
        f1: mean(&per_class.iter().map(|m| m.f1).collect::<Vec<_>>()),
        auc: (!aucs.is_empty()).then(|| mean(&aucs)),
        map_at,
        mean_map,
        instance_count: videos.iter().map(|v| v.instances.len()).sum(),
        early_curve,
        videos,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes `report.json`, `early_curve.csv` and `timeline.csv` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    let mut curve = String::from("fraction,auc\n");
    for (f, a) in &report.early_curve {
        curve.push_str(&format!("{f},{}\n", fmt_opt(*a)));
    }
    fs::write(dir.join("early_curve.csv"), curve)?;
    let mut tl = String::from("video_id,clip,start_frame,end_frame,probs\n");
    for v in &report.videos {
        for (i, (w, p)) in v.windows.iter().zip(&v.clip_probs).enumerate() {
            let probs: Vec<String> = p.iter().map(f64::to_string).collect();
            tl.push_str(&format!("{},{i},{},{},{}\n", v.video_id, w.0, w.1, probs.join(";")));
        }
    }
    fs::write(dir.join("timeline.csv"), tl)?;
    Ok(())
}
