//! Joint optimisation of all three parts of the model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::{preprocess, SkeletonSequence};
use crate::error::{Error, Result};
use crate::model::{LossBreakdown, Model};
use crate::optim::Adam;

/// A training video after preprocessing and clip splitting.
#[derive(Clone, Debug)]
pub struct PreparedVideo {
    pub video_id: String,
    pub clips: Tensor,
    pub labels: Vec<u8>,
}

pub fn prepare(model: &Model, data: &[SkeletonSequence]) -> Result<Vec<PreparedVideo>> {
    data.iter()
        .map(|seq| {
            let p = preprocess(seq, model.config().max_frames)?;
            Ok(PreparedVideo {
                video_id: seq.video_id.clone(),
                clips: model.clips(&p.frames)?,
                labels: seq.label.clone(),
            })
        })
        .collect()
}

/// Mean loss components and training accuracy of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_mil_p: f64,
    pub l_fml: f64,
    pub l_mil_o: f64,
    pub train_acc: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,l_mil_p,l_fml,l_mil_o,train_acc";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.l_mil_p, self.l_fml, self.l_mil_o, self.train_acc
        )
    }
}

/// Loss and per-parameter gradient of one video.
pub fn video_gradient(
    model: &Model,
    video: &PreparedVideo,
    epoch: usize,
) -> Result<(Vec<Vec<f64>>, LossBreakdown)> {
    let mut tape = Tape::new();
    let (loss, breakdown) = model.loss(&mut tape, video.clips.clone(), &video.labels)?;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite {
            epoch,
            video_id: video.video_id.clone(),
            detail: format!(
                "mil_p={} fml={} mil_o={}",
                breakdown.mil_p, breakdown.fml, breakdown.mil_o
            ),
        });
    }
    let grads = tape.backward(loss);
    let mut out: Vec<Vec<f64>> = model.store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
    for (id, var) in tape.param_nodes() {
        if let Some(g) = grads.wrt(var) {
            for (dst, v) in out[id.0].iter_mut().zip(g) {
                *dst += v;
            }
        }
    }
    Ok((out, breakdown))
}

pub struct Trainer {
    pub model: Model,
    optimizer: Adam,
    seed: u64,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, seed: u64) -> Self {
        let cfg = model.config();
        let optimizer = Adam::new(cfg.lr, cfg.weight_decay);
        Trainer {
            model,
            optimizer,
            seed,
            epoch: 0,
        }
    }

    /// Continues from a restored model after `epoch` completed epochs.
    pub fn resume(model: Model, seed: u64, epoch: usize) -> Self {
        Trainer {
            epoch,
            ..Self::new(model, seed)
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Visit order of epoch `epoch` (0-based); depends only on the seed and
    /// the epoch number so resumed runs shuffle identically.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    fn batch_gradients(&self, videos: &[&PreparedVideo]) -> Result<Vec<(Vec<Vec<f64>>, LossBreakdown)>> {
        let threads = self.model.config().threads.min(videos.len()).max(1);
        if threads == 1 {
            return videos
                .iter()
                .map(|v| video_gradient(&self.model, v, self.epoch))
                .collect();
        }
        let chunk = videos.len().div_ceil(threads);
        let model = &self.model;
        let epoch = self.epoch;
        let parts: Vec<Result<Vec<_>>> = std::thread::scope(|s| {
            let handles: Vec<_> = videos
                .chunks(chunk)
                .map(|c| {
                    s.spawn(move || {
                        c.iter()
                            .map(|v| video_gradient(model, v, epoch))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::data("worker thread panicked"))))
                .collect()
        });
        let mut out = Vec::with_capacity(videos.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// One pass over `videos` in a seeded order, one optimizer step per
    /// batch. Gradients within a batch are averaged in visit order.
    pub fn train_epoch(&mut self, videos: &[PreparedVideo]) -> Result<EpochMetrics> {
        if videos.is_empty() {
            return Err(Error::data("training set is empty"));
        }
        let order = self.epoch_order(self.epoch, videos.len());
        let batch = self.model.config().batch_size;
        let (mut mil_p, mut fml, mut mil_o, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(batch) {
            let members: Vec<&PreparedVideo> = idx.iter().map(|&i| &videos[i]).collect();
            let results = self.batch_gradients(&members)?;
            self.model.store.zero_grad();
            for (grads, b) in &results {
                self.model.store.accumulate_from(grads);
                mil_p += b.mil_p;
                fml += b.fml;
                mil_o += b.mil_o;
            }
            for ((_, b), v) in results.iter().zip(&members) {
                let hit = b
                    .online_prob
                    .iter()
                    .zip(&v.labels)
                    .all(|(&p, &y)| (p > 0.5) == (y == 1));
                correct += usize::from(hit);
            }
            if results.len() > 1 {
                let scale = 1.0 / results.len() as f64;
                for p in self.model.store.iter_mut() {
                    p.grad.iter_mut().for_each(|g| *g *= scale);
                }
            }
            self.optimizer.step(&mut self.model.store);
        }
        self.epoch += 1;
        let n = videos.len() as f64;
        Ok(EpochMetrics {
            epoch: self.epoch,
            l_mil_p: mil_p / n,
            l_fml: fml / n,
            l_mil_o: mil_o / n,
            train_acc: correct as f64 / n,
        })
    }

    /// Trains until `epochs` epochs are complete, calling `on_epoch` after
    /// each one.
    pub fn fit(
        &mut self,
        videos: &[PreparedVideo],
        epochs: usize,
        mut on_epoch: impl FnMut(&Trainer, &EpochMetrics) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        let mut log = Vec::new();
        while self.epoch < epochs {
            let m = self.train_epoch(videos)?;
            on_epoch(self, &m)?;
            log.push(m);
        }
        Ok(log)
    }
}
