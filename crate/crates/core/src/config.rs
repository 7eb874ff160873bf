use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training and model hyper-parameters.
///
/// `Default` gives the full-scale settings (6000-frame videos, 1024 hidden
/// units); [`TrainConfig::desk`] shrinks the sequence length and hidden size
/// for runs on a single core.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Top-K divisor: `K = max(1, floor(L / kappa))`.
    pub kappa: usize,
    pub theta_class: f64,
    pub theta_score: f64,
    /// Clip window length in frames.
    pub tau: usize,
    /// Clip stride in frames.
    pub stride: usize,
    pub max_frames: usize,
    pub hidden: usize,
    /// Number of action classes, excluding background.
    pub n_c: usize,
    pub seed: u64,
    pub ablate_pseudo: bool,
    pub ablate_local: bool,
    pub ablate_longrange: bool,
    /// Videos per optimizer step.
    pub batch_size: usize,
    /// Largest hop distance `M` of the multi-scale adjacency.
    pub scales: usize,
    pub graph_channels: usize,
    pub feature_dim: usize,
    pub graph_layers: usize,
    pub temporal_layers: usize,
    pub temporal_kernel: usize,
    pub in_channels: usize,
    /// Worker threads for per-video gradients inside a batch. Results do not
    /// depend on this value.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            weight_decay: 5e-4,
            epochs: 100,
            kappa: 8,
            theta_class: 0.4,
            theta_score: 0.3,
            tau: 20,
            stride: 20,
            max_frames: 6000,
            hidden: 1024,
            n_c: 1,
            seed: 0,
            ablate_pseudo: false,
            ablate_local: false,
            ablate_longrange: false,
            batch_size: 1,
            scales: 3,
            graph_channels: 32,
            feature_dim: 64,
            graph_layers: 1,
            temporal_layers: 2,
            temporal_kernel: 3,
            in_channels: 3,
            threads: 1,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset: 600-frame videos and 128 hidden units.
    pub fn desk() -> Self {
        TrainConfig {
            max_frames: 600,
            hidden: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::config(msg)) };
        check(self.lr.is_finite() && self.lr > 0.0, "lr must be positive")?;
        check(
            self.weight_decay.is_finite() && self.weight_decay >= 0.0,
            "weight_decay must be non-negative",
        )?;
        check(
            (0.0..=1.0).contains(&self.theta_class),
            "theta_class must lie in [0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.theta_score),
            "theta_score must lie in [0, 1]",
        )?;
        check(self.tau >= 1 && self.stride >= 1, "tau and stride must be >= 1")?;
        check(self.kappa >= 1, "kappa must be >= 1")?;
        check(self.max_frames >= self.tau, "max_frames must be >= tau")?;
        check(self.hidden >= 1, "hidden must be >= 1")?;
        check(self.n_c >= 1, "n_c must be >= 1")?;
        check(self.batch_size >= 1, "batch_size must be >= 1")?;
        check(self.threads >= 1, "threads must be >= 1")?;
        check(
            self.graph_channels >= 1 && self.feature_dim >= 1 && self.in_channels >= 1,
            "channel widths must be >= 1",
        )?;
        check(self.graph_layers >= 1, "graph_layers must be >= 1")?;
        check(self.temporal_kernel % 2 == 1, "temporal_kernel must be odd")?;
        Ok(())
    }

    /// Clips per preprocessed video.
    pub fn clips_per_video(&self) -> usize {
        (self.max_frames - self.tau) / self.stride + 1
    }
}

/// Everything a command-line run needs, loaded from one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Optional edge file; the shipped 18-joint skeleton otherwise.
    pub edges: Option<PathBuf>,
    pub eval_fractions: Vec<f64>,
    pub instance_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            train_data: None,
            test_data: None,
            out_dir: PathBuf::from("out"),
            edges: None,
            eval_fractions: (1..=10).map(|i| i as f64 / 10.0).collect(),
            instance_threshold: 0.5,
        }
    }
}

impl RunConfig {
    /// Parses and validates a config file. Returns whether `train.seed` was
    /// given explicitly, so callers can apply a fallback seed.
    pub fn from_json(text: &str) -> Result<(Self, bool)> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        let seed_given = raw
            .get("train")
            .and_then(|t| t.get("seed"))
            .is_some();
        let cfg: RunConfig =
            serde_json::from_value(raw).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok((cfg, seed_given))
    }

    pub fn load(path: &Path) -> Result<(Self, bool)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.instance_threshold > 0.0 && self.instance_threshold < 1.0) {
            return Err(Error::config("instance_threshold must lie in (0, 1)"));
        }
        if self
            .eval_fractions
            .iter()
            .any(|&f| !(f > 0.0 && f <= 1.0))
        {
            return Err(Error::config("eval_fractions must lie in (0, 1]"));
        }
        Ok(())
    }
}
