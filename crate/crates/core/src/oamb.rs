//! Online branch: causal recurrent scoring of clips with a background class,
//! its frame-level and video-level losses, prefix scoring and detection
//! instance extraction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::cpgb::topk_count;
use crate::error::{Error, Result};
use crate::lfem::ClipWindowing;

#[derive(Clone, Debug, PartialEq)]
pub struct OambParams {
    /// `[C_f + H, 4H]`, gate blocks ordered input, forget, candidate, output.
    pub lstm_w: ParamId,
    pub lstm_b: ParamId,
    /// `[H, n_c + 1]`; column 0 is background.
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl OambParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        feature_dim: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = feature_dim + hidden;
        OambParams {
            lstm_w: store.add_uniform("oamb.lstm.w", &[fan_in, 4 * hidden], fan_in, rng),
            lstm_b: store.add_zeros("oamb.lstm.b", &[4 * hidden]),
            head_w: store.add_uniform("oamb.head.w", &[hidden, classes + 1], hidden, rng),
            head_b: store.add_zeros("oamb.head.b", &[classes + 1]),
        }
    }

    pub fn hidden(&self, store: &ParamStore) -> usize {
        store.get(self.lstm_w).value.shape()[1] / 4
    }
}

/// Per-clip class probabilities `[L, n_c + 1]`. Row `i` reads clip features
/// `0..=i` only.
pub fn online_timeline(
    tape: &mut Tape,
    store: &ParamStore,
    params: &OambParams,
    features: Var,
) -> Result<Var> {
    let w = tape.param(store, params.lstm_w);
    let b = tape.param(store, params.lstm_b);
    let clips = tape.value(features).rows();
    let mut states = Vec::with_capacity(clips);
    let mut state = None;
    for i in 0..clips {
        let x = tape.select_row(features, i)?;
        let s = tape.lstm_cell(state, x, w, b)?;
        states.push(s);
        state = Some(s);
    }
    let hidden = tape.stack_rows(&states, 0)?;
    let hw = tape.param(store, params.head_w);
    let hb = tape.param(store, params.head_b);
    let logits = tape.affine(hidden, hw, hb)?;
    Ok(tape.softmax(logits))
}

/// Mean cross-entropy of the online probabilities against pseudo labels.
pub fn frame_loss(tape: &mut Tape, timeline: Var, labels: &[usize]) -> Result<Var> {
    let rows = tape.value(timeline).rows();
    if rows != labels.len() {
        return Err(Error::Shape {
            op: "frame_loss",
            left: vec![rows],
            right: vec![labels.len()],
        });
    }
    tape.nll(timeline, labels)
}

/// Binary MIL loss per action class on the top-K mean of that class's online
/// probabilities.
pub fn mil_loss_online(tape: &mut Tape, timeline: Var, labels: &[f64], kappa: usize) -> Result<Var> {
    let (clips, cols) = (tape.value(timeline).rows(), tape.value(timeline).cols());
    if cols != labels.len() + 1 {
        return Err(Error::Shape {
            op: "mil_loss_online",
            left: vec![clips, cols],
            right: vec![labels.len()],
        });
    }
    let k = topk_count(clips, kappa);
    let mut parts = Vec::with_capacity(labels.len());
    for (c, &y) in labels.iter().enumerate() {
        let col = tape.select_col(timeline, c + 1)?;
        let col = tape.reshape(col, &[clips, 1])?;
        let video = tape.topk_mean(col, k)?;
        parts.push(tape.bce(video, &[y], true)?);
    }
    tape.sum(&parts)
}

/// Top-K mean over the first `k` clips of one class's probabilities.
pub fn prefix_video_prob(action_probs: &[f64], k: usize, kappa: usize) -> Result<f64> {
    if k == 0 || k > action_probs.len() {
        return Err(Error::data(format!(
            "prefix length {k} outside 1..={}",
            action_probs.len()
        )));
    }
    let top = topk_count(k, kappa);
    let sel = crate::autodiff::top_k_indices(action_probs[..k].iter().copied(), top);
    Ok(sel.iter().map(|&i| action_probs[i]).sum::<f64>() / top as f64)
}

/// Recurrent state carried across clips of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineState {
    /// `h` followed by `c`, `2H` values.
    pub state: Vec<f64>,
    pub clips_seen: usize,
}

impl OnlineState {
    pub fn new(hidden: usize) -> Self {
        OnlineState {
            state: vec![0.0; 2 * hidden],
            clips_seen: 0,
        }
    }

    pub fn hidden(&self) -> &[f64] {
        &self.state[..self.state.len() / 2]
    }
}

/// Advances `state` by one clip feature and returns that clip's class
/// probabilities (background first).
pub fn online_step(
    store: &ParamStore,
    params: &OambParams,
    state: &mut OnlineState,
    feature: &[f64],
) -> Result<Vec<f64>> {
    let hidden = params.hidden(store);
    let mut tape = Tape::new();
    let prev = tape.constant(Tensor::new(vec![2, hidden], state.state.clone())?);
    let x = tape.constant(Tensor::vector(feature.to_vec()));
    let w = tape.param(store, params.lstm_w);
    let b = tape.param(store, params.lstm_b);
    let next = if state.clips_seen == 0 {
        tape.lstm_cell(None, x, w, b)?
    } else {
        tape.lstm_cell(Some(prev), x, w, b)?
    };
    let h = tape.select_row(next, 0)?;
    let hw = tape.param(store, params.head_w);
    let hb = tape.param(store, params.head_b);
    let logits = tape.affine(h, hw, hb)?;
    let probs = tape.softmax(logits);
    state.state = tape.value(next).data().to_vec();
    state.clips_seen += 1;
    Ok(tape.value(probs).data().to_vec())
}

/// A maximal run of consecutive clips whose action probability clears the
/// extraction threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionInstance {
    pub start_frame: usize,
    pub end_frame: usize,
    pub score: f64,
    pub class: usize,
    pub first_clip: usize,
    pub last_clip: usize,
}

/// Instances for one class, sorted by score descending (ties keep temporal
/// order).
pub fn extract_instances(
    action_probs: &[f64],
    class: usize,
    threshold: f64,
    window: ClipWindowing,
) -> Vec<DetectionInstance> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < action_probs.len() {
        if action_probs[i] < threshold {
            i += 1;
            continue;
        }
        let first = i;
        while i < action_probs.len() && action_probs[i] >= threshold {
            i += 1;
        }
        let last = i - 1;
        let score =
            action_probs[first..=last].iter().sum::<f64>() / (last - first + 1) as f64;
        out.push(DetectionInstance {
            start_frame: window.frame_range(first).0,
            end_frame: window.frame_range(last).1,
            score,
            class,
            first_clip: first,
            last_clip: last,
        });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::grad_check;

    fn setup(hidden: usize, feat: usize, seed: u64) -> (ParamStore, OambParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = OambParams::register(&mut store, feat, hidden, 1, &mut rng);
        (store, p)
    }

    fn timeline(store: &ParamStore, p: &OambParams, feats: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let f = tape.constant(feats.clone());
        let a = online_timeline(&mut tape, store, p, f).unwrap();
        tape.value(a).clone()
    }

    #[test]
    fn zero_recurrent_weights_give_softmax_of_bias() {
        let (mut store, p) = setup(4, 3, 1);
        store.get_mut(p.lstm_w).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        store.get_mut(p.head_b).value.data_mut().copy_from_slice(&[0.3, -0.2]);
        let feats = Tensor::uniform(&[5, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let a = timeline(&store, &p, &feats);
        let mut expect = vec![0.3, -0.2];
        crate::autodiff::kernels::softmax_in_place(&mut expect);
        for i in 0..5 {
            assert_eq!(a.row(i), &expect[..]);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let (store, p) = setup(6, 3, 3);
        let feats = Tensor::uniform(&[8, 3], 2.0, &mut ChaCha8Rng::seed_from_u64(4));
        let a = timeline(&store, &p, &feats);
        for i in 0..8 {
            assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prefix_outputs_do_not_depend_on_video_length() {
        let (store, p) = setup(6, 3, 5);
        let long = Tensor::uniform(&[14, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(6));
        let short = Tensor::new(vec![4, 3], long.data()[..12].to_vec()).unwrap();
        let a_long = timeline(&store, &p, &long);
        let a_short = timeline(&store, &p, &short);
        assert_eq!(&a_long.data()[..8], a_short.data());
    }

    #[test]
    fn streaming_steps_match_batch_timeline() {
        let (store, p) = setup(5, 3, 7);
        let feats = Tensor::uniform(&[6, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(8));
        let batch = timeline(&store, &p, &feats);
        let mut state = OnlineState::new(5);
        for i in 0..6 {
            let probs = online_step(&store, &p, &mut state, feats.row(i)).unwrap();
            assert_eq!(&probs[..], batch.row(i));
        }
        assert_eq!(state.clips_seen, 6);
    }

    #[test]
    fn frame_loss_examples() {
        let mut tape = Tape::new();
        let exact = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let l = frame_loss(&mut tape, exact, &[0, 1]).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        let uniform = tape.constant(Tensor::new(vec![3, 2], vec![0.5; 6]).unwrap());
        let l = frame_loss(&mut tape, uniform, &[0, 1, 1]).unwrap();
        assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(frame_loss(&mut tape, uniform, &[0, 1]).is_err());
    }

    #[test]
    fn frame_loss_gradient_through_softmax() {
        let logits = Tensor::uniform(&[5, 2], 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let err = grad_check(&[logits], 1e-6, |t, v| {
            let a = t.softmax(v[0]);
            frame_loss(t, a, &[0, 1, 1, 0, 1])
        })
        .unwrap();
        assert!(err < 1e-6, "frame loss rel err {err}");
    }

    #[test]
    fn online_mil_examples() {
        let mut tape = Tape::new();
        let ones = tape.constant(Tensor::new(vec![3, 2], vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap());
        let l = mil_loss_online(&mut tape, ones, &[1.0], 8).unwrap();
        assert!(tape.scalar(l) < 1e-6);
        let half = tape.constant(Tensor::new(vec![3, 2], vec![0.5; 6]).unwrap());
        let l = mil_loss_online(&mut tape, half, &[1.0], 8).unwrap();
        assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn prefix_probability_examples() {
        let probs = [0.2, 0.9, 0.4, 0.7, 0.1];
        // L = 5, kappa = 8 -> K = 1 -> max
        assert_eq!(prefix_video_prob(&probs, 5, 8).unwrap(), 0.9);
        assert_eq!(prefix_video_prob(&probs, 1, 8).unwrap(), 0.2);
        assert_eq!(prefix_video_prob(&probs, 4, 2).unwrap(), (0.9 + 0.7) / 2.0);
        assert!(prefix_video_prob(&probs, 0, 8).is_err());
        assert!(prefix_video_prob(&probs, 6, 8).is_err());
    }

    #[test]
    fn instance_extraction_examples() {
        let w = ClipWindowing::new(20, 20);
        let inst = extract_instances(&[0.1, 0.8, 0.9, 0.2, 0.7], 1, 0.5, w);
        assert_eq!(inst.len(), 2);
        assert_eq!((inst[0].first_clip, inst[0].last_clip), (1, 2));
        assert_eq!((inst[0].start_frame, inst[0].end_frame), (21, 60));
        assert!((inst[0].score - 0.85).abs() < 1e-15);
        assert_eq!((inst[1].first_clip, inst[1].last_clip), (4, 4));

        assert!(extract_instances(&[0.1, 0.2], 1, 0.5, w).is_empty());
        let all = extract_instances(&[0.6, 0.7, 0.8], 1, 0.5, w);
        assert_eq!(all.len(), 1);
        assert_eq!((all[0].start_frame, all[0].end_frame), (1, 60));
    }
}
