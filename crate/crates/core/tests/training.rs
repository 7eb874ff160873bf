use wogma::data::{preprocess, synthesize, SynthParams};
use wogma::graph::{joints, SkeletonGraph};
use wogma::trainer::{prepare, Trainer};
use wogma::{Model, TrainConfig};

fn trainer(cfg: TrainConfig, seed: u64) -> Trainer {
    Trainer::new(Model::new(cfg, SkeletonGraph::default_skeleton(), seed).unwrap(), seed)
}

#[test]
fn loss_falls_over_the_first_ten_epochs() {
    let data = synthesize(&SynthParams {
        n_videos: 40,
        seed: 31,
        ..SynthParams::default()
    })
    .unwrap();
    let mut t = trainer(TrainConfig::desk(), 3);
    let videos = prepare(&t.model, &data).unwrap();
    let log = t.fit(&videos, 10, |_, _| Ok(())).unwrap();
    let total = |i: usize| log[i].l_mil_p + log[i].l_fml + log[i].l_mil_o;
    assert!(total(9) < total(0), "epoch 1 {:.4}, epoch 10 {:.4}", total(0), total(9));
}

#[test]
fn single_video_overfits() {
    let data = synthesize(&SynthParams {
        n_videos: 1,
        positive_fraction: 1.0,
        seed: 8,
        ..SynthParams::default()
    })
    .unwrap();
    let mut t = trainer(TrainConfig::desk(), 0);
    let videos = prepare(&t.model, &data).unwrap();
    // one video per epoch, so each epoch is one optimiser step
    let log = t.fit(&videos, 200, |_, _| Ok(())).unwrap();
    let last = log.last().unwrap();
    let total = last.l_mil_p + last.l_fml + last.l_mil_o;
    assert!(total < 0.05, "loss after 200 steps {total:.4}");
}

#[test]
fn action_segments_move_limbs_more() {
    let data = synthesize(&SynthParams {
        n_videos: 40,
        positive_fraction: 1.0,
        seed: 12,
        ..SynthParams::default()
    })
    .unwrap();
    let limbs = [
        joints::R_ELBOW,
        joints::R_WRIST,
        joints::L_ELBOW,
        joints::L_WRIST,
        joints::R_KNEE,
        joints::R_ANKLE,
        joints::L_KNEE,
        joints::L_ANKLE,
    ];
    let variance = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    let (mut inside, mut outside) = (0.0, 0.0);
    for seq in &data {
        let p = preprocess(seq, seq.num_frames()).unwrap();
        let segs = seq.gt_segments.as_ref().unwrap();
        let active = |t: usize| segs.iter().any(|s| (s.start..=s.end).contains(&(t + 1)));
        for &j in &limbs {
            for axis in 0..2 {
                let coord = |t: usize| p.frame(t)[j * 3 + axis];
                let a: Vec<f64> = (0..p.num_frames()).filter(|&t| active(t)).map(coord).collect();
                let b: Vec<f64> = (0..p.num_frames()).filter(|&t| !active(t)).map(coord).collect();
                inside += variance(&a);
                outside += variance(&b);
            }
        }
    }
    assert!(inside >= 2.0 * outside, "inside {inside:.4}, outside {outside:.4}");
}

#[test]
fn ablation_flags_change_parameter_counts() {
    let count = |cfg: TrainConfig| {
        Model::new(cfg, SkeletonGraph::default_skeleton(), 0)
            .unwrap()
            .store
            .scalar_count()
    };
    let full = count(TrainConfig::desk());
    let no_long = count(TrainConfig {
        ablate_longrange: true,
        ..TrainConfig::desk()
    });
    let no_local = count(TrainConfig {
        ablate_local: true,
        ..TrainConfig::desk()
    });
    assert!(no_long < full);
    assert_ne!(no_local, full);
}
