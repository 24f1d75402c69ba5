use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forward_trace, pose_loss_grad, Backbone, PoseInput, PoseWeights, DEFAULT_K};
use crate::error::{Error, Result};
use crate::grad::{adam_step, AdamState};
use crate::keypoints::KeypointSet;
use crate::losses::mpjpe;

/// One training pair: a prepared cloud and its ground-truth keypoints in
/// the frame the network predicts (world units for 3D).
#[derive(Debug, Clone)]
pub struct PoseSample {
    pub input: PoseInput,
    pub target: KeypointSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseTrainConfig {
    pub backbone: Backbone,
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for PoseTrainConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Hybrid,
            dim: 3,
            epochs: 50,
            lr: 2e-4,
            weight_decay: 1e-5,
            batch_size: 8,
            k: DEFAULT_K,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mpjpe: f64,
    pub heldout_mpjpe: Option<f64>,
}

/// Mean MPJPE of `weights` over `samples`.
pub fn evaluate_mpjpe(weights: &PoseWeights, samples: &[PoseSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid("no samples to evaluate".into()));
    }
    let errs: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let trace = forward_trace(&s.input, weights)?;
            let mut coords = trace.output;
            if weights.dim == 3 {
                for j in coords.chunks_exact_mut(3) {
                    j.iter_mut().zip(s.input.centroid.iter()).for_each(|(v, c)| *v += c);
                }
            }
            mpjpe(&KeypointSet::new(weights.dim, coords)?, &s.target)
        })
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Mini-batch AdamW on the mean squared keypoint loss. Per-sample gradients
/// may run in parallel but are summed in sample order, so the result only
/// depends on the seed.
pub fn train_pose(train: &[PoseSample], heldout: &[PoseSample], cfg: &PoseTrainConfig) -> Result<(PoseWeights, Vec<EpochLog>)> {
    if train.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut weights = PoseWeights::init(cfg.backbone, cfg.dim, cfg.seed)?;
    let mut params = weights.to_flat();
    let mut state = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_04de4);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut err_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train[i];
                    pose_loss_grad(&s.input, &weights, &s.target).and_then(|(loss, g, pred)| Ok((loss, g, mpjpe(&pred, &s.target)?)))
                })
                .collect::<Result<_>>()?;
            let mut total = weights.zeros_like();
            for (loss, g, err) in &results {
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!("non-finite pose loss in epoch {epoch}")));
                }
                loss_sum += loss;
                err_sum += err;
                total.add_assign(&g.weights);
            }
            total.scale(1.0 / batch.len() as f64);
            adam_step(&mut params, &total.to_flat(), &mut state, cfg.lr, cfg.weight_decay)
                .map_err(|e| Error::Diverged(format!("epoch {epoch}: {e}")))?;
            weights.set_flat(&params)?;
        }
        let heldout_mpjpe = if heldout.is_empty() { None } else { Some(evaluate_mpjpe(&weights, heldout)?) };
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_mpjpe: err_sum / train.len() as f64,
            heldout_mpjpe,
        });
    }
    Ok((weights, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn toy_sample(seed: u64, backbone: Backbone) -> PoseSample {
        let pts: Vec<_> = (0..48)
            .map(|i| {
                let t = i as f64 + seed as f64 * 0.1;
                Vector3::new(t.sin(), (t * 0.7).cos(), (t * 1.3).sin() * 0.5)
            })
            .collect();
        let input = PoseInput::from_world(&pts, backbone, 4).unwrap();
        let target = KeypointSet::new(3, (0..57).map(|i| ((i + seed as usize) as f64 * 0.21).cos() * 0.8).collect()).unwrap();
        PoseSample { input, target }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let cfg = PoseTrainConfig {
            backbone: Backbone::PointNet,
            epochs: 2,
            lr: 0.0,
            ..Default::default()
        };
        let data = vec![toy_sample(0, cfg.backbone), toy_sample(1, cfg.backbone)];
        let (w, log) = train_pose(&data, &[], &cfg).unwrap();
        assert_eq!(w, PoseWeights::init(cfg.backbone, 3, cfg.seed).unwrap());
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = PoseTrainConfig {
            backbone: Backbone::Hybrid,
            epochs: 2,
            batch_size: 2,
            ..Default::default()
        };
        let data: Vec<_> = (0..3).map(|s| toy_sample(s, cfg.backbone)).collect();
        let a = train_pose(&data, &data[..1], &cfg).unwrap();
        let b = train_pose(&data, &data[..1], &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn memorizes_one_sample() {
        let cfg = PoseTrainConfig {
            backbone: Backbone::Hybrid,
            epochs: 500,
            lr: 1e-3,
            batch_size: 1,
            ..Default::default()
        };
        let data = vec![toy_sample(3, cfg.backbone)];
        let (_, log) = train_pose(&data, &[], &cfg).unwrap();
        let last = log.last().unwrap().train_mpjpe;
        assert!(last < 0.01 * 1.6, "final MPJPE {last}");
    }
}
