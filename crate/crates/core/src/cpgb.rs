//! Pseudo-label branch: long-range temporal convolutions over clip features,
//! per-clip action scores, top-K video pooling, the video-level MIL loss and
//! two-stage-threshold pseudo labels.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CpgbParams {
    /// `(weight [C_f, C_f, k], bias [C_f])` per temporal layer; empty when the
    /// long-range stack is ablated.
    pub convs: Vec<(ParamId, ParamId)>,
    pub score_w: ParamId,
    pub score_b: ParamId,
}

impl CpgbParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        feature_dim: usize,
        layers: usize,
        kernel: usize,
        classes: usize,
        ablate_longrange: bool,
        rng: &mut R,
    ) -> Self {
        let mut convs = Vec::new();
        if !ablate_longrange {
            for i in 0..layers {
                let w = store.add_uniform(
                    format!("cpgb.conv{i}.w"),
                    &[feature_dim, feature_dim, kernel],
                    feature_dim * kernel,
                    rng,
                );
                let b = store.add_zeros(format!("cpgb.conv{i}.b"), &[feature_dim]);
                convs.push((w, b));
            }
        }
        CpgbParams {
            convs,
            score_w: store.add_uniform("cpgb.score.w", &[feature_dim, classes], feature_dim, rng),
            score_b: store.add_zeros("cpgb.score.b", &[classes]),
        }
    }
}

/// `F^{i+1} = relu(conv1d(F^i))` for every configured layer. With no layers
/// the input node itself is returned.
pub fn temporal_stack(
    tape: &mut Tape,
    store: &ParamStore,
    params: &CpgbParams,
    features: Var,
) -> Result<Var> {
    let mut h = features;
    for &(w, b) in &params.convs {
        let w = tape.param(store, w);
        let b = tape.param(store, b);
        let y = tape.conv1d(h, w, b)?;
        h = tape.relu(y);
    }
    Ok(h)
}

/// Raw per-clip action scores `[L, n_c]`.
pub fn clip_scores(
    tape: &mut Tape,
    store: &ParamStore,
    params: &CpgbParams,
    features: Var,
) -> Result<Var> {
    let w = tape.param(store, params.score_w);
    let b = tape.param(store, params.score_b);
    tape.affine(features, w, b)
}

/// Scores to probabilities: sigmoid for a single class, softmax across
/// classes otherwise.
pub fn to_probs(tape: &mut Tape, scores: Var) -> Var {
    if tape.value(scores).cols() == 1 {
        tape.sigmoid(scores)
    } else {
        tape.softmax(scores)
    }
}

/// `K = max(1, floor(L / kappa))`.
pub fn topk_count(clips: usize, kappa: usize) -> usize {
    (clips / kappa.max(1)).max(1)
}

/// Video-level score per class (mean of the top-K clip scores) and its
/// probability.
pub fn topk_video_score(tape: &mut Tape, scores: Var, kappa: usize) -> Result<(Var, Var)> {
    let k = topk_count(tape.value(scores).rows(), kappa);
    let video = tape.topk_mean(scores, k)?;
    let probs = to_probs(tape, video);
    Ok((video, probs))
}

/// Video-level MIL loss. A single class uses the binary form so negative
/// videos contribute; several classes use `-Σ y_c log p_c`.
pub fn mil_loss(tape: &mut Tape, video_probs: Var, labels: &[f64]) -> Result<Var> {
    let binary = labels.len() == 1;
    tape.bce(video_probs, labels, binary)
}

/// Per-clip class assignment: 0 is background, `1..=n_c` are actions.
pub type PseudoLabels = Vec<usize>;

/// Two-stage thresholding filtered by the ground-truth video labels.
///
/// Class `c` survives iff its video probability is at least `theta_class` and
/// the video is labelled with `c`. A clip takes the surviving class whose
/// probability is highest among those at or above `theta_score`.
pub fn generate_pseudo_labels(
    clip_probs: &Tensor,
    video_probs: &[f64],
    theta_class: f64,
    theta_score: f64,
    labels: &[u8],
) -> Result<PseudoLabels> {
    let classes = clip_probs.cols();
    if video_probs.len() != classes || labels.len() != classes {
        return Err(Error::Shape {
            op: "pseudo labels",
            left: clip_probs.shape().to_vec(),
            right: vec![video_probs.len(), labels.len()],
        });
    }
    let survives: Vec<bool> = (0..classes)
        .map(|c| video_probs[c] >= theta_class && labels[c] == 1)
        .collect();
    Ok((0..clip_probs.rows())
        .map(|i| {
            let row = clip_probs.row(i);
            let mut best: Option<(usize, f64)> = None;
            for c in 0..classes {
                if survives[c] && row[c] >= theta_score && best.is_none_or(|(_, p)| row[c] > p) {
                    best = Some((c, row[c]));
                }
            }
            best.map_or(0, |(c, _)| c + 1)
        })
        .collect())
}
