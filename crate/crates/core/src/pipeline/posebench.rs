//! Synthetic pose-regression benchmark: clouds unprojected from two
//! adjacent source views of random figures, and backbone training on them.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::RunConfig;
use crate::error::Result;
use crate::keypoints::KeypointSet;
use crate::posenet::{evaluate_mpjpe, train_pose, Backbone, EpochLog, PoseInput, PoseSample, PoseTrainConfig, PoseWeights};
use crate::scenegen::{camera_ring, generate_figure_with, render_view, DatasetSample, ViewData, RING_TARGET};
use crate::unproject::{merge, sample, unproject_depth, PointCloud, SampledCloud};

/// Figure seeds of the test split start here so the splits never overlap.
pub const TEST_SEED_OFFSET: u64 = 1 << 32;

/// Network-independent part of a benchmark sample.
#[derive(Debug, Clone)]
pub struct PoseCloud {
    pub cloud: SampledCloud,
    pub keypoints3d: KeypointSet,
    /// Keypoints projected into the first source view.
    pub keypoints2d: KeypointSet,
}

/// Lifts the masked depth of two source views and samples `points` points.
pub fn views_cloud(views: [&ViewData; 2], keypoints3d: &KeypointSet, points: usize, seed: u64) -> Result<PoseCloud> {
    let mut cloud = PointCloud::default();
    for (tag, view) in views.iter().enumerate() {
        cloud = merge(&cloud, &unproject_depth(&view.depth, &view.mask, &view.camera)?.tagged(tag as u32));
    }
    Ok(PoseCloud {
        cloud: sample(&cloud, points, seed)?,
        keypoints3d: keypoints3d.clone(),
        keypoints2d: views[0].keypoints2d.clone(),
    })
}

/// Renders the two source views of figure `seed`, lifts their masked depth
/// and samples `cfg.pose_points` points.
pub fn figure_cloud(seed: u64, cfg: &RunConfig) -> Result<PoseCloud> {
    let figure = generate_figure_with(seed, cfg.gaussians_per_bone)?;
    let ring = camera_ring(cfg.views, cfg.ring_radius, Vector3::from(RING_TARGET), cfg.pose_image_size)?;
    let first = ChaCha8Rng::seed_from_u64(seed).random_range(0..ring.len());
    let a = render_view(&figure, &ring[first])?;
    let b = render_view(&figure, &ring[(first + 1) % ring.len()])?;
    views_cloud([&a, &b], &figure.keypoints, cfg.pose_points, seed)
}

/// Cloud from the source pair of a stored sample.
pub fn sample_cloud(sample: &DatasetSample, points: usize, seed: u64) -> Result<PoseCloud> {
    let [a, b] = sample.source;
    views_cloud([&sample.views[a], &sample.views[b]], &sample.keypoints3d, points, seed)
}

/// Clouds for `count` consecutive figure seeds starting at `first_seed`.
pub fn figure_clouds(first_seed: u64, count: usize, cfg: &RunConfig) -> Result<Vec<PoseCloud>> {
    (0..count as u64).into_par_iter().map(|i| figure_cloud(first_seed + i, cfg)).collect()
}

/// Network inputs for `backbone` with targets of dimension `dim`.
pub fn pose_samples(clouds: &[PoseCloud], backbone: Backbone, dim: usize, k: usize) -> Result<Vec<PoseSample>> {
    clouds
        .par_iter()
        .map(|c| {
            Ok(PoseSample {
                input: PoseInput::new(&c.cloud, backbone, k)?,
                target: if dim == 3 { c.keypoints3d.clone() } else { c.keypoints2d.clone() },
            })
        })
        .collect()
}

/// Training settings taken from a run config.
pub fn train_config(cfg: &RunConfig, backbone: Backbone, seed: u64) -> PoseTrainConfig {
    PoseTrainConfig {
        backbone,
        dim: cfg.pose_dim,
        epochs: cfg.pose_epochs,
        lr: cfg.pose_lr,
        weight_decay: cfg.weight_decay,
        batch_size: cfg.pose_batch,
        k: cfg.k,
        seed,
    }
}

/// Outcome of one backbone training run.
#[derive(Debug, Clone)]
pub struct BackboneRun {
    pub backbone: Backbone,
    pub seed: u64,
    pub weights: PoseWeights,
    pub log: Vec<EpochLog>,
    pub heldout_mpjpe: f64,
}

/// Trains one backbone on `train` and scores it on `test`.
pub fn run_backbone(train: &[PoseCloud], test: &[PoseCloud], cfg: &RunConfig, backbone: Backbone, seed: u64) -> Result<BackboneRun> {
    let tc = train_config(cfg, backbone, seed);
    let tr = pose_samples(train, backbone, tc.dim, tc.k)?;
    let te = pose_samples(test, backbone, tc.dim, tc.k)?;
    let (weights, log) = train_pose(&tr, &[], &tc)?;
    let heldout_mpjpe = evaluate_mpjpe(&weights, &te)?;
    Ok(BackboneRun {
        backbone,
        seed,
        weights,
        log,
        heldout_mpjpe,
    })
}

/// Median of a non-empty list.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
