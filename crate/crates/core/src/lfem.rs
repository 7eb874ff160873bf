//! Local feature extraction: clip windowing, multi-scale spatio-temporal graph
//! convolution, time collapse and joint aggregation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use std::sync::Arc;

use crate::autodiff::{Csr, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::MultiScaleAdjacency;

/// Sliding-window clip layout over a frame sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipWindowing {
    pub tau: usize,
    pub stride: usize,
}

impl ClipWindowing {
    pub fn new(tau: usize, stride: usize) -> Self {
        ClipWindowing { tau, stride }
    }

    /// `floor((T - tau) / stride) + 1`; the remainder after the last full
    /// window is dropped.
    pub fn clip_count(&self, frames: usize) -> Result<usize> {
        if frames < self.tau {
            return Err(Error::data(format!(
                "sequence of {frames} frames is shorter than the {}-frame window",
                self.tau
            )));
        }
        Ok((frames - self.tau) / self.stride + 1)
    }

    /// 1-based inclusive frame interval covered by 0-based clip `i`.
    pub fn frame_range(&self, clip: usize) -> (usize, usize) {
        let start = clip * self.stride + 1;
        (start, start + self.tau - 1)
    }
}

/// Cuts a `T×N×C` frame array into clips, returned stacked as
/// `[L·τ·N, C]` with rows ordered (clip, frame, joint).
pub fn split_clips(
    frames: &[f64],
    joints: usize,
    channels: usize,
    window: ClipWindowing,
) -> Result<Tensor> {
    let per_frame = joints * channels;
    if per_frame == 0 || !frames.len().is_multiple_of(per_frame) {
        return Err(Error::data(format!(
            "frame buffer of {} values is not a multiple of {joints}×{channels}",
            frames.len()
        )));
    }
    let t = frames.len() / per_frame;
    let clips = window.clip_count(t)?;
    let clip_len = window.tau * per_frame;
    let mut out = Vec::with_capacity(clips * clip_len);
    for i in 0..clips {
        let start = i * window.stride * per_frame;
        out.extend_from_slice(&frames[start..start + clip_len]);
    }
    Tensor::new(vec![clips * window.tau * joints, channels], out)
}

/// Structural sizes shared by the feature extractor's parameters and forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LfemDims {
    pub tau: usize,
    pub joints: usize,
    pub in_channels: usize,
    pub graph_channels: usize,
    pub feature_dim: usize,
    pub scales: usize,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LfemParams {
    Graph {
        /// One `[M+1, C_in, C_out]` weight stack per graph layer.
        theta: Vec<ParamId>,
        /// `[τ, C_out, C_out]`: per-frame channel mixing summed over the window.
        collapse: ParamId,
        agg_w: ParamId,
        agg_b: ParamId,
    },
    /// Ablation: the raw clip flattened and projected by one affine map.
    Flat { proj_w: ParamId, proj_b: ParamId },
}

impl LfemParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dims: &LfemDims,
        ablate_local: bool,
        rng: &mut R,
    ) -> Self {
        if ablate_local {
            let flat = dims.tau * dims.joints * dims.in_channels;
            return LfemParams::Flat {
                proj_w: store.add_uniform("lfem.flat.w", &[flat, dims.feature_dim], flat, rng),
                proj_b: store.add_zeros("lfem.flat.b", &[dims.feature_dim]),
            };
        }
        let scales = dims.scales + 1;
        let mut theta = Vec::with_capacity(dims.layers);
        let mut cin = dims.in_channels;
        for layer in 0..dims.layers {
            theta.push(store.add_uniform(
                format!("lfem.g3d{layer}.theta"),
                &[scales, cin, dims.graph_channels],
                scales * cin,
                rng,
            ));
            cin = dims.graph_channels;
        }
        let c = dims.graph_channels;
        let collapse = store.add_uniform("lfem.collapse.w", &[dims.tau, c, c], dims.tau * c, rng);
        let agg_in = dims.joints * c;
        let agg_w = store.add_uniform("lfem.agg.w", &[agg_in, dims.feature_dim], agg_in, rng);
        let agg_b = store.add_zeros("lfem.agg.b", &[dims.feature_dim]);
        LfemParams::Graph {
            theta,
            collapse,
            agg_w,
            agg_b,
        }
    }
}

/// `relu(Σ_m Â_m · X · Θ_m)` applied to every window block of `x`.
///
/// `x` is `[blocks·τN, C_in]`, `theta` is `[M+1, C_in, C_out]`.
pub fn g3d_conv(
    tape: &mut Tape,
    x: Var,
    adjacency: &MultiScaleAdjacency,
    theta: Var,
) -> Result<Var> {
    mix_scales(tape, x, adjacency, theta, |a, m| {
        (a.matrix(m), a.matrix_transposed(m))
    })
}

/// [`g3d_conv`] on window means: `x` is `[blocks·N, C_in]` with one skeleton
/// per window, and each output row is the value [`g3d_conv`] produces for
/// every frame of that window when the frames are replaced by their mean.
/// Since the tiled window matrix only sees the frame mean, this is the same
/// map evaluated τ times more cheaply.
pub fn g3d_conv_windowed(
    tape: &mut Tape,
    x: Var,
    adjacency: &MultiScaleAdjacency,
    theta: Var,
) -> Result<Var> {
    mix_scales(tape, x, adjacency, theta, |a, m| (a.block(m), a.block_transposed(m)))
}

fn mix_scales(
    tape: &mut Tape,
    x: Var,
    adjacency: &MultiScaleAdjacency,
    theta: Var,
    pick: impl Fn(&MultiScaleAdjacency, usize) -> (&Arc<Csr>, &Arc<Csr>),
) -> Result<Var> {
    let tshape = tape.value(theta).shape().to_vec();
    if tshape.len() != 3 || tshape[0] != adjacency.num_scales() {
        return Err(Error::Shape {
            op: "g3d_conv scales",
            left: vec![adjacency.num_scales()],
            right: tshape,
        });
    }
    let mut parts = Vec::with_capacity(tshape[0]);
    for m in 0..tshape[0] {
        let (a, at) = pick(adjacency, m);
        parts.push(tape.spmm_blocks(a, at, x)?);
    }
    let stacked = tape.concat_cols(&parts)?;
    let weights = tape.reshape(theta, &[tshape[0] * tshape[1], tshape[2]])?;
    let mixed = tape.matmul(stacked, weights)?;
    Ok(tape.relu(mixed))
}

/// Per-window frame mean of clips stacked as by [`split_clips`]:
/// `[L·τ·N, C]` to `[L·N, C]`.
pub fn window_mean(clips: &Tensor, tau: usize, joints: usize) -> Result<Tensor> {
    let per_clip = tau * joints;
    if clips.rank() != 2 || per_clip == 0 || !clips.rows().is_multiple_of(per_clip) {
        return Err(Error::Shape {
            op: "window_mean",
            left: clips.shape().to_vec(),
            right: vec![per_clip],
        });
    }
    let c = clips.cols();
    let count = clips.rows() / per_clip;
    let mut out = vec![0.0; count * joints * c];
    for l in 0..count {
        let dst = &mut out[l * joints * c..(l + 1) * joints * c];
        for t in 0..tau {
            let start = (l * tau + t) * joints * c;
            for (d, v) in dst.iter_mut().zip(&clips.data()[start..start + joints * c]) {
                *d += v;
            }
        }
        for d in dst.iter_mut() {
            *d /= tau as f64;
        }
    }
    Tensor::new(vec![count * joints, c], out)
}

/// Collapses each window's τ frames into one skeleton with a learned
/// per-frame channel mixing; joints are never mixed.
///
/// `x` is `[L·τ·N, C]`, `w` is `[τ, C, C_out]`; the result is `[L·N, C_out]`.
pub fn collapse_time(
    tape: &mut Tape,
    x: Var,
    clips: usize,
    tau: usize,
    joints: usize,
    w: Var,
) -> Result<Var> {
    let channels = tape.value(x).cols();
    let joint_major = tape.swap_middle(x, [clips, tau, joints, channels])?;
    let rows = tape.reshape(joint_major, &[clips * joints, tau * channels])?;
    let wshape = tape.value(w).shape().to_vec();
    let w2 = tape.reshape(w, &[tau * channels, *wshape.last().unwrap_or(&0)])?;
    tape.matmul(rows, w2)
}

/// [`collapse_time`] for windows whose τ frames are identical: mixing with
/// every per-frame matrix and summing equals one product with their sum.
/// `x` is `[L·N, C]`, `w` is `[τ, C, C_out]`.
pub fn collapse_repeated(tape: &mut Tape, x: Var, w: Var) -> Result<Var> {
    let wshape = tape.value(w).shape().to_vec();
    if wshape.len() != 3 {
        return Err(shape_err_w(&wshape));
    }
    let (tau, c, cout) = (wshape[0], wshape[1], wshape[2]);
    let ones = tape.constant(Tensor::new(vec![1, tau], vec![1.0; tau])?);
    let flat = tape.reshape(w, &[tau, c * cout])?;
    let summed = tape.matmul(ones, flat)?;
    let summed = tape.reshape(summed, &[c, cout])?;
    tape.matmul(x, summed)
}

fn shape_err_w(shape: &[usize]) -> Error {
    Error::Shape {
        op: "collapse weights",
        left: shape.to_vec(),
        right: vec![0, 0, 0],
    }
}

/// Flattens each clip's `N×C` skeleton and maps it to one feature vector with
/// relu. `x` is `[L·N, C]`; the result is `[L, C_f]`.
pub fn aggregate_joints(
    tape: &mut Tape,
    x: Var,
    clips: usize,
    joints: usize,
    w: Var,
    b: Var,
) -> Result<Var> {
    let channels = tape.value(x).cols();
    let flat = tape.reshape(x, &[clips, joints * channels])?;
    let y = tape.affine(flat, w, b)?;
    Ok(tape.relu(y))
}

/// Clip features `[L, C_f]` for clips stacked as by [`split_clips`].
pub fn extract_features(
    tape: &mut Tape,
    store: &ParamStore,
    params: &LfemParams,
    adjacency: &MultiScaleAdjacency,
    dims: &LfemDims,
    clips: Tensor,
) -> Result<Var> {
    let per_clip = dims.tau * dims.joints;
    if clips.rank() != 2 || clips.cols() != dims.in_channels || !clips.rows().is_multiple_of(per_clip) {
        return Err(Error::Shape {
            op: "extract_features",
            left: clips.shape().to_vec(),
            right: vec![per_clip, dims.in_channels],
        });
    }
    let count = clips.rows() / per_clip;
    match params {
        LfemParams::Flat { proj_w, proj_b } => {
            let x = tape.constant(clips.reshape(&[count, per_clip * dims.in_channels])?);
            let w = tape.param(store, *proj_w);
            let b = tape.param(store, *proj_b);
            tape.affine(x, w, b)
        }
        LfemParams::Graph {
            theta,
            collapse,
            agg_w,
            agg_b,
        } => {
            let mut h = tape.constant(window_mean(&clips, dims.tau, dims.joints)?);
            for &th in theta {
                let th = tape.param(store, th);
                h = g3d_conv_windowed(tape, h, adjacency, th)?;
            }
            let cw = tape.param(store, *collapse);
            let skel = collapse_repeated(tape, h, cw)?;
            let w = tape.param(store, *agg_w);
            let b = tape.param(store, *agg_b);
            aggregate_joints(tape, skel, count, dims.joints, w, b)
        }
    }
}

/// Frame-level evaluation of the graph branch of [`extract_features`]: every
/// window frame goes through the tiled convolution and the full time
/// collapse. Agrees with [`extract_features`] up to rounding at τ times the
/// cost.
pub fn extract_features_framewise(
    tape: &mut Tape,
    store: &ParamStore,
    params: &LfemParams,
    adjacency: &MultiScaleAdjacency,
    dims: &LfemDims,
    clips: Tensor,
) -> Result<Var> {
    let LfemParams::Graph {
        theta,
        collapse,
        agg_w,
        agg_b,
    } = params
    else {
        return extract_features(tape, store, params, adjacency, dims, clips);
    };
    let per_clip = dims.tau * dims.joints;
    if clips.rank() != 2 || clips.cols() != dims.in_channels || !clips.rows().is_multiple_of(per_clip) {
        return Err(Error::Shape {
            op: "extract_features",
            left: clips.shape().to_vec(),
            right: vec![per_clip, dims.in_channels],
        });
    }
    let count = clips.rows() / per_clip;
    let mut h = tape.constant(clips);
    for &th in theta {
        let th = tape.param(store, th);
        h = g3d_conv(tape, h, adjacency, th)?;
    }
    let cw = tape.param(store, *collapse);
    let skel = collapse_time(tape, h, count, dims.tau, dims.joints, cw)?;
    let w = tape.param(store, *agg_w);
    let b = tape.param(store, *agg_b);
    aggregate_joints(tape, skel, count, dims.joints, w, b)
}
