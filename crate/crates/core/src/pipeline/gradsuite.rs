//! Seeded finite-difference sweep over every differentiable operation:
//! the renderer (per parameter class), the pose network (per backbone,
//! weights and points), the feature decoder and each loss.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::Camera;
use crate::error::Result;
use crate::featdec::{self, decode, decode_backward, DecoderWeights};
use crate::gaussian::{GaussianSet, ParamClass};
use crate::grad::{adjoint_inner, backward_render, finite_diff_check_with, FdOptions, GradCheckReport};
use crate::image::{Image, Mask};
use crate::keypoints::{KeypointSet, NUM_JOINTS};
use crate::losses::{
    loss_depth, loss_depth_grad, loss_feature, loss_feature_grad, loss_image, loss_image_grad, loss_pose, loss_pose_grad,
};
use crate::posenet::{self, pose_loss_grad, Backbone, PoseInput, PoseWeights};
use crate::splat::{contributor_fingerprint, render};

pub const DEFAULT_SEEDS: usize = 20;
pub const TOLERANCE: f64 = 1e-4;

// Geometry moves footprints by fractions of a pixel; opacity, color and
// feature act through sigmoids and tolerate a wider step.
const RENDER_GEOMETRY_EPS: f64 = 1e-5;
const RENDER_APPEARANCE_EPS: f64 = 1e-3;
// Piecewise quadratic in one weight or coordinate: any step inside the
// regime is exact, and the widest one keeps rounding noise lowest.
const POSE_EPS: f64 = 1e-1;
const POSE_SHRINK: u32 = 2;
const DECODER_WEIGHT_EPS: f64 = 1e-3;
const DECODER_FEATURE_EPS: f64 = 1e-5;
const LOSS_EPS: f64 = 1e-6;
const IMAGE_LOSS_EPS: f64 = 1e-5;

/// Merged outcome of one named check over all seeds.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub seeds: usize,
    pub max_rel_error: f64,
    /// Analytic and numeric values at the worst coordinate.
    pub worst: (f64, f64),
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    /// One line per check.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{:<28} {} max_rel={:.3e} worst={:.6e}/{:.6e} checked={} skipped={} seeds={}\n",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.max_rel_error,
                c.worst.0,
                c.worst.1,
                c.checked,
                c.skipped,
                c.seeds
            ));
        }
        s
    }
}

struct Accumulator {
    tolerance: f64,
    seeds: usize,
    checks: Vec<(String, GradCheckReport)>,
}

impl Accumulator {
    fn add(&mut self, name: &str, r: GradCheckReport) {
        match self.checks.iter_mut().find(|(n, _)| n == name) {
            Some((_, acc)) => acc.merge(&r),
            None => self.checks.push((name.to_string(), r)),
        }
    }

    fn finish(self) -> SuiteReport {
        let checks = self
            .checks
            .into_iter()
            // A check must verify at least half of the coordinates it tried;
            // the rest sat within one step of a kink.
            .map(|(name, r)| CheckResult {
                passed: r.checked > 0 && r.skipped <= r.checked && r.max_rel_error < self.tolerance,
                name,
                seeds: self.seeds,
                max_rel_error: r.max_rel_error,
                worst: (r.worst_analytic, r.worst_numeric),
                checked: r.checked,
                skipped: r.skipped,
            })
            .collect();
        SuiteReport {
            tolerance: self.tolerance,
            checks,
        }
    }
}

/// Runs every check on `count` random instances seeded from `first_seed`.
pub fn run_gradient_suite(first_seed: u64, count: usize) -> Result<SuiteReport> {
    let mut acc = Accumulator {
        tolerance: TOLERANCE,
        seeds: count,
        checks: Vec::new(),
    };
    for seed in first_seed..first_seed + count as u64 {
        check_render(seed, &mut acc)?;
        check_pose(seed, &mut acc)?;
        check_decoder(seed, &mut acc)?;
        check_losses(seed, &mut acc)?;
    }
    Ok(acc.finish())
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize, lo: f64, hi: f64) -> Image {
    let mut img = Image::new(w, h, c);
    img.data.iter_mut().for_each(|v| *v = rng.random_range(lo..hi));
    img
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Mask {
    let mut m = Mask::new(w, h, false);
    m.data.iter_mut().for_each(|v| *v = rng.random_bool(0.7));
    m.data[0] = true;
    m
}

/// Random scene of up to 50 Gaussians in front of a camera of at most 32×32.
pub fn random_scene(seed: u64) -> (GaussianSet, Camera, [f64; 3]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(5..=20);
    let f = rng.random_range(1..=4);
    let (w, h) = (rng.random_range(16..=32), rng.random_range(16..=32));
    let cam = Camera::identity(1.2 * w as f64, 1.2 * w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h);
    let mut set = GaussianSet::zeros(n, f);
    for i in 0..n {
        let z = rng.random_range(2.0..4.0);
        set.positions[i * 3] = rng.random_range(-0.35..0.35) * z;
        set.positions[i * 3 + 1] = rng.random_range(-0.35..0.35) * z;
        set.positions[i * 3 + 2] = z;
        for v in &mut set.rotations[i * 4..i * 4 + 4] {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in &mut set.scales[i * 3..i * 3 + 3] {
            *v = rng.random_range(0.04f64..0.3).ln();
        }
        set.opacities[i] = rng.random_range(-2.0..2.0);
    }
    for v in set.colors.iter_mut().chain(set.features.iter_mut()) {
        *v = rng.random_range(-2.0..2.0);
    }
    let bg = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
    (set, cam, bg)
}

fn check_render(seed: u64, acc: &mut Accumulator) -> Result<()> {
    let (set, cam, bg) = random_scene(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xAD);
    let (w, h, f) = (cam.width, cam.height, set.feature_dim());
    let adjoint = crate::splat::RenderOutput {
        color: random_image(&mut rng, w, h, 3, -1.0, 1.0),
        feature: random_image(&mut rng, w, h, f, -1.0, 1.0),
        depth: random_image(&mut rng, w, h, 1, -1.0, 1.0),
        alpha: random_image(&mut rng, w, h, 1, -1.0, 1.0),
    };
    let grads = backward_render(&set, &cam, bg, &adjoint)?.scene;
    let base = set.to_flat();
    let analytic = grads.to_flat();
    let with = |p: &[f64]| {
        let mut s = set.clone();
        s.set_flat(p);
        s
    };
    let regime = |p: &[f64]| contributor_fingerprint(&with(p), &cam).unwrap_or(u64::MAX);
    let mut offset = 0;
    for class in ParamClass::ALL {
        let len = set.param(class).len();
        let idx: Vec<usize> = (offset..offset + len).collect();
        offset += len;
        let (eps, shrink) = match class {
            ParamClass::Position | ParamClass::Rotation | ParamClass::Scale => (RENDER_GEOMETRY_EPS, 0),
            _ => (RENDER_APPEARANCE_EPS, 2),
        };
        let opts = FdOptions {
            eps,
            indices: Some(&idx),
            regime: Some(&regime),
            shrink,
        };
        let r = finite_diff_check_with(
            |p| render(&with(p), &cam, bg).map(|o| adjoint_inner(&o, &adjoint)).unwrap_or(f64::NAN),
            &base,
            &analytic,
            &opts,
        );
        acc.add(&format!("render.{}", class.name()), r);
    }
    Ok(())
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(0.0..1.8), rng.random_range(-0.3..0.3)))
        .collect()
}

/// A few weights and biases from every layer.
fn layer_indices(w: &PoseWeights, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx = Vec::new();
    let mut offset = 0;
    for (_, l) in w.layers() {
        for _ in 0..12 {
            idx.push(offset + rng.random_range(0..l.weight.len()));
        }
        for _ in 0..4 {
            idx.push(offset + l.weight.len() + rng.random_range(0..l.bias.len()));
        }
        offset += l.param_count();
    }
    idx.sort_unstable();
    idx.dedup();
    idx
}

fn check_pose(seed: u64, acc: &mut Accumulator) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9053);
    let pts = random_cloud(&mut rng, 24);
    let dim = if seed % 2 == 0 { 3 } else { 2 };
    let target = KeypointSet::new(dim, (0..NUM_JOINTS * dim).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    for backbone in Backbone::ALL {
        let input = PoseInput::from_world(&pts, backbone, 4)?;
        let w = PoseWeights::init(backbone, dim, seed)?;
        let (_, grad, _) = pose_loss_grad(&input, &w, &target)?;

        let idx = layer_indices(&w, &mut rng);
        let with_weights = |p: &[f64]| {
            let mut q = w.clone();
            q.set_flat(p).expect("same length");
            q
        };
        let regime = |p: &[f64]| posenet::activation_fingerprint(&input, &with_weights(p)).unwrap_or(u64::MAX);
        let r = finite_diff_check_with(
            |p| pose_loss_grad(&input, &with_weights(p), &target).map(|r| r.0).unwrap_or(f64::NAN),
            &w.to_flat(),
            &grad.weights.to_flat(),
            &FdOptions {
                eps: POSE_EPS,
                indices: Some(&idx),
                regime: Some(&regime),
                shrink: POSE_SHRINK,
            },
        );
        acc.add(&format!("pose.{backbone}.weights"), r);

        let with_points = |p: &[f64]| {
            let mut q = input.clone();
            for (v, c) in q.points.iter_mut().zip(p.chunks_exact(3)) {
                *v = Vector3::new(c[0], c[1], c[2]);
            }
            q
        };
        let flat = |v: &[Vector3<f64>]| v.iter().flat_map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>();
        let regime = |p: &[f64]| posenet::activation_fingerprint(&with_points(p), &w).unwrap_or(u64::MAX);
        let r = finite_diff_check_with(
            |p| pose_loss_grad(&with_points(p), &w, &target).map(|r| r.0).unwrap_or(f64::NAN),
            &flat(&input.points),
            &flat(&grad.points),
            &FdOptions {
                eps: POSE_EPS,
                indices: None,
                regime: Some(&regime),
                shrink: POSE_SHRINK,
            },
        );
        acc.add(&format!("pose.{backbone}.points"), r);
    }
    Ok(())
}

fn check_decoder(seed: u64, acc: &mut Accumulator) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDEC);
    let (w, h, f) = (5, 4, 8);
    let feats = random_image(&mut rng, w, h, f, 0.0, 1.0);
    let mut alpha = random_image(&mut rng, w, h, 1, 0.0, 1.0);
    alpha.data[3] = 0.0;
    let weights = DecoderWeights::init(f, 3, seed);
    let adj = random_image(&mut rng, w, h, 3, -1.0, 1.0);
    let objective = |feats: &Image, wt: &DecoderWeights| {
        decode(feats, &alpha, wt).map(|o| o.data.iter().zip(&adj.data).map(|(a, b)| a * b).sum()).unwrap_or(f64::NAN)
    };
    let (gw, gf) = decode_backward(&feats, &alpha, &weights, &adj)?;

    let with_weights = |p: &[f64]| {
        let mut q = weights.clone();
        q.set_flat(p).expect("same length");
        q
    };
    let regime = |p: &[f64]| featdec::activation_fingerprint(&feats, &alpha, &with_weights(p)).unwrap_or(u64::MAX);
    let r = finite_diff_check_with(
        |p| objective(&feats, &with_weights(p)),
        &weights.to_flat(),
        &gw.to_flat(),
        &FdOptions {
            eps: DECODER_WEIGHT_EPS,
            indices: None,
            regime: Some(&regime),
            shrink: 1,
        },
    );
    acc.add("decoder.weights", r);

    let with_feats = |p: &[f64]| Image::from_data(w, h, f, p.to_vec()).expect("same shape");
    let regime = |p: &[f64]| featdec::activation_fingerprint(&with_feats(p), &alpha, &weights).unwrap_or(u64::MAX);
    let r = finite_diff_check_with(
        |p| objective(&with_feats(p), &weights),
        &feats.data,
        &gf.data,
        &FdOptions {
            eps: DECODER_FEATURE_EPS,
            indices: None,
            regime: Some(&regime),
            shrink: 0,
        },
    );
    acc.add("decoder.features", r);
    Ok(())
}

/// Hash of the sign pattern of `pred − gt`, the kinks of every L1 term.
fn l1_regime(p: &[f64], gt: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    p.iter().zip(gt).for_each(|(a, b)| (a > b).hash(&mut h));
    h.finish()
}

fn check_losses(seed: u64, acc: &mut Accumulator) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1055);
    let (w, h) = (rng.random_range(12..=20), rng.random_range(12..=20));
    let mask = random_mask(&mut rng, w, h);
    let gt_rgb = random_image(&mut rng, w, h, 3, 0.0, 1.0);
    let pred_rgb = random_image(&mut rng, w, h, 3, 0.0, 1.0);
    let img = |p: &[f64], c| Image::from_data(w, h, c, p.to_vec()).expect("same shape");
    let opts = |regime| FdOptions {
        eps: LOSS_EPS,
        indices: None,
        regime: Some(regime),
        shrink: 0,
    };

    let (_, g) = loss_image_grad(&pred_rgb, &gt_rgb, &mask)?;
    let regime = |p: &[f64]| l1_regime(p, &gt_rgb.data);
    let r = finite_diff_check_with(
        |p| loss_image(&img(p, 3), &gt_rgb, &mask).unwrap_or(f64::NAN),
        &pred_rgb.data,
        &g.data,
        &FdOptions {
            eps: IMAGE_LOSS_EPS,
            shrink: 2,
            ..opts(&regime)
        },
    );
    acc.add("loss.image", r);

    let steps = rng.random_range(1..=3);
    let gt_d = random_image(&mut rng, w, h, 1, 1.0, 3.0);
    let preds: Vec<Image> = (0..steps).map(|_| random_image(&mut rng, w, h, 1, 1.0, 3.0)).collect();
    let (_, gs) = loss_depth_grad(&preds, &gt_d, &mask, 0.9)?;
    let base: Vec<f64> = preds.iter().flat_map(|p| p.data.clone()).collect();
    let analytic: Vec<f64> = gs.iter().flat_map(|g| g.data.clone()).collect();
    let gt_rep: Vec<f64> = (0..steps).flat_map(|_| gt_d.data.clone()).collect();
    let regime = |p: &[f64]| l1_regime(p, &gt_rep);
    let split = |p: &[f64]| p.chunks_exact(w * h).map(|c| img(c, 1)).collect::<Vec<_>>();
    let r = finite_diff_check_with(
        |p| loss_depth(&split(p), &gt_d, &mask, 0.9).unwrap_or(f64::NAN),
        &base,
        &analytic,
        &opts(&regime),
    );
    acc.add("loss.depth", r);

    let e = 3;
    let gt_e = random_image(&mut rng, w, h, e, 0.0, 1.0);
    let pred_e = random_image(&mut rng, w, h, e, 0.0, 1.0);
    let (_, g) = loss_feature_grad(&pred_e, &gt_e, &mask)?;
    let regime = |p: &[f64]| l1_regime(p, &gt_e.data);
    let r = finite_diff_check_with(
        |p| loss_feature(&img(p, e), &gt_e, &mask).unwrap_or(f64::NAN),
        &pred_e.data,
        &g.data,
        &opts(&regime),
    );
    acc.add("loss.feature", r);

    let dim = if seed % 2 == 0 { 3 } else { 2 };
    let gt_k = KeypointSet::new(dim, (0..NUM_JOINTS * dim).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let pred_k = KeypointSet::new(dim, (0..NUM_JOINTS * dim).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let (_, g) = loss_pose_grad(&pred_k, &gt_k)?;
    let r = finite_diff_check_with(
        |p| KeypointSet::new(dim, p.to_vec()).and_then(|k| loss_pose(&k, &gt_k)).unwrap_or(f64::NAN),
        &pred_k.coords,
        &g,
        &FdOptions {
            eps: LOSS_EPS,
            ..FdOptions::default()
        },
    );
    acc.add("loss.pose", r);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_seeds_pass() {
        let report = run_gradient_suite(0, 2).unwrap();
        assert!(report.passed(), "{}", report.to_text());
        assert_eq!(report.checks.len(), 6 + 6 + 2 + 4);
    }
}
