//! The full detector: feature extractor, pseudo-label branch and online
//! branch sharing one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::config::TrainConfig;
use crate::cpgb::{self, CpgbParams, PseudoLabels};
use crate::error::{Error, Result};
use crate::graph::{MultiScaleAdjacency, SkeletonGraph};
use crate::lfem::{self, ClipWindowing, LfemDims, LfemParams};
use crate::oamb::{self, OambParams, OnlineState};

#[derive(Debug)]
pub struct Model {
    config: TrainConfig,
    graph: SkeletonGraph,
    adjacency: MultiScaleAdjacency,
    dims: LfemDims,
    pub store: ParamStore,
    pub lfem: LfemParams,
    pub cpgb: CpgbParams,
    pub oamb: OambParams,
}

/// Loss components of one video, plus the online video probability used for
/// training accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub mil_p: f64,
    pub fml: f64,
    pub mil_o: f64,
    pub total: f64,
    pub online_prob: Vec<f64>,
    pub pseudo_labels: PseudoLabels,
}

impl Model {
    /// Registers all parameters from a generator seeded with `seed`.
    pub fn new(config: TrainConfig, graph: SkeletonGraph, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = LfemDims {
            tau: config.tau,
            joints: graph.num_joints(),
            in_channels: config.in_channels,
            graph_channels: config.graph_channels,
            feature_dim: config.feature_dim,
            scales: config.scales,
            layers: config.graph_layers,
        };
        let adjacency = MultiScaleAdjacency::build(&graph, config.scales, config.tau);
        let mut store = ParamStore::new();
        let lfem = LfemParams::register(&mut store, &dims, config.ablate_local, &mut rng);
        let cpgb = CpgbParams::register(
            &mut store,
            config.feature_dim,
            config.temporal_layers,
            config.temporal_kernel,
            config.n_c,
            config.ablate_longrange,
            &mut rng,
        );
        let oamb = OambParams::register(
            &mut store,
            config.feature_dim,
            config.hidden,
            config.n_c,
            &mut rng,
        );
        Ok(Model {
            config,
            graph,
            adjacency,
            dims,
            store,
            lfem,
            cpgb,
            oamb,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn graph(&self) -> &SkeletonGraph {
        &self.graph
    }

    pub fn windowing(&self) -> ClipWindowing {
        ClipWindowing::new(self.config.tau, self.config.stride)
    }

    /// Values per clip: `τ · N · C`.
    pub fn clip_len(&self) -> usize {
        self.dims.tau * self.dims.joints * self.dims.in_channels
    }

    /// Cuts a preprocessed `T×N×C` frame buffer into stacked clips.
    pub fn clips(&self, frames: &[f64]) -> Result<Tensor> {
        lfem::split_clips(frames, self.dims.joints, self.dims.in_channels, self.windowing())
    }

    fn features(&self, tape: &mut Tape, clips: Tensor) -> Result<Var> {
        lfem::extract_features(tape, &self.store, &self.lfem, &self.adjacency, &self.dims, clips)
    }

    fn check_labels(&self, labels: &[u8]) -> Result<()> {
        if labels.len() != self.config.n_c {
            return Err(Error::data(format!(
                "video has {} labels, model has {} classes",
                labels.len(),
                self.config.n_c
            )));
        }
        Ok(())
    }

    /// Records the joint training loss of one video on `tape` and returns the
    /// loss node with its components.
    pub fn loss(&self, tape: &mut Tape, clips: Tensor, labels: &[u8]) -> Result<(Var, LossBreakdown)> {
        self.check_labels(labels)?;
        let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
        let kappa = self.config.kappa;

        let features = self.features(tape, clips)?;
        let temporal = cpgb::temporal_stack(tape, &self.store, &self.cpgb, features)?;
        let scores = cpgb::clip_scores(tape, &self.store, &self.cpgb, temporal)?;
        let (_, video_probs) = cpgb::topk_video_score(tape, scores, kappa)?;
        let mil_p = cpgb::mil_loss(tape, video_probs, &y)?;

        let clip_probs = cpgb::to_probs(tape, scores);
        let pseudo = cpgb::generate_pseudo_labels(
            tape.value(clip_probs),
            tape.value(video_probs).data(),
            self.config.theta_class,
            self.config.theta_score,
            labels,
        )?;

        let timeline = oamb::online_timeline(tape, &self.store, &self.oamb, features)?;
        let mil_o = oamb::mil_loss_online(tape, timeline, &y, kappa)?;
        let fml = oamb::frame_loss(tape, timeline, &pseudo)?;

        let total = if self.config.ablate_pseudo {
            tape.sum(&[mil_p, mil_o])?
        } else {
            tape.sum(&[mil_p, fml, mil_o])?
        };
        let online_prob = self.video_probs(tape.value(timeline), kappa)?;
        let breakdown = LossBreakdown {
            mil_p: tape.scalar(mil_p),
            fml: if self.config.ablate_pseudo { 0.0 } else { tape.scalar(fml) },
            mil_o: tape.scalar(mil_o),
            total: tape.scalar(total),
            online_prob,
            pseudo_labels: pseudo,
        };
        Ok((total, breakdown))
    }

    fn video_probs(&self, timeline: &Tensor, kappa: usize) -> Result<Vec<f64>> {
        let clips = timeline.rows();
        (1..=self.config.n_c)
            .map(|c| {
                let col: Vec<f64> = (0..clips).map(|i| timeline.row(i)[c]).collect();
                oamb::prefix_video_prob(&col, clips, kappa)
            })
            .collect()
    }

    /// Online class probabilities `[L, n_c + 1]` for a whole video.
    pub fn timeline(&self, clips: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let features = self.features(&mut tape, clips)?;
        let a = oamb::online_timeline(&mut tape, &self.store, &self.oamb, features)?;
        Ok(tape.value(a).clone())
    }

    /// Pseudo-label branch clip probabilities `[L, n_c]`.
    pub fn pseudo_branch_probs(&self, clips: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let features = self.features(&mut tape, clips)?;
        let temporal = cpgb::temporal_stack(&mut tape, &self.store, &self.cpgb, features)?;
        let scores = cpgb::clip_scores(&mut tape, &self.store, &self.cpgb, temporal)?;
        let probs = cpgb::to_probs(&mut tape, scores);
        Ok(tape.value(probs).clone())
    }

    pub fn start_stream(&self) -> OnlineState {
        OnlineState::new(self.config.hidden)
    }

    /// Scores one clip (`τ·N·C` values, frame-major) and advances `state`.
    pub fn push_clip(&self, state: &mut OnlineState, clip: &[f64]) -> Result<Vec<f64>> {
        if clip.len() != self.clip_len() {
            return Err(Error::data(format!(
                "clip has {} values, expected {}",
                clip.len(),
                self.clip_len()
            )));
        }
        let x = Tensor::new(
            vec![self.dims.tau * self.dims.joints, self.dims.in_channels],
            clip.to_vec(),
        )?;
        let mut tape = Tape::new();
        let f = self.features(&mut tape, x)?;
        let feature = tape.value(f).row(0).to_vec();
        oamb::online_step(&self.store, &self.oamb, state, &feature)
    }
}
