//! Per-scene Gaussian fitting against a multi-view sample.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{FeatureMode, RunConfig};
use super::io::write_file;
use crate::error::{Error, Result};
use crate::featdec::{decode, decode_backward, DecoderWeights};
use crate::gaussian::{logit, GaussianSet, ParamClass};
use crate::grad::{adam_step, backward_render, AdamState};
use crate::image::Image;
use crate::keypoints::KeypointSet;
use crate::losses::{feature_mse, loss_depth_grad, loss_feature_grad, loss_image_grad_weighted, loss_pose_grad, psnr, LossReport};
use crate::posenet::{forward_trace, backward_pose, knn_graph, world_point_grad, PoseInput, PoseWeights};
use crate::scenegen::{DatasetSample, BACKGROUND};
use crate::splat::{render, render_activated, RenderOutput};
use crate::unproject::{merge, sample_indices, unproject_depth, PointCloud};

/// Result of [`optimize_scene`].
#[derive(Debug, Clone)]
pub struct SceneFit {
    pub scene: GaussianSet,
    pub decoder: Option<DecoderWeights>,
    pub pose: Option<PoseWeights>,
    /// One report per iteration.
    pub trajectory: Vec<LossReport>,
    pub heldout_view: usize,
    pub psnr_before: f64,
    pub psnr_after: f64,
    pub embed_mse_before: Option<f64>,
    pub embed_mse_after: Option<f64>,
}

/// The view kept out of training: the sample's target unless it is a
/// source view, otherwise the view opposite the source pair.
pub fn heldout_view(sample: &DatasetSample) -> usize {
    let n = sample.views.len();
    if !sample.source.contains(&sample.target) || n <= 2 {
        sample.target
    } else {
        (sample.source[1] + n / 2) % n
    }
}

/// Gaussians seeded from the two source views: positions from unprojected
/// ground-truth depth, neutral gray color, isotropic scales from the mean
/// distance to the three nearest seeds.
pub fn init_scene(sample: &DatasetSample, cfg: &RunConfig) -> Result<GaussianSet> {
    let mut cloud = PointCloud::default();
    for &s in &sample.source {
        let v = &sample.views[s];
        let pc = unproject_depth(&v.depth, &v.mask, &v.camera)?;
        cloud = merge(&cloud, &pc);
    }
    if cloud.is_empty() {
        return Err(Error::NoForegroundPoints);
    }
    let n = cfg.init_gaussians.min(cloud.len());
    let idx = sample_indices(cloud.len(), n, cfg.seed)?;
    let points: Vec<Vector3<f64>> = idx.iter().map(|&i| cloud.points[i]).collect();
    let f = match cfg.feature_mode {
        FeatureMode::Splat => cfg.feature_dim,
        FeatureMode::SharedColor => 0,
    };
    let spacing: Vec<f64> = if n > 3 {
        let nb = knn_graph(&points, 3)?;
        (0..n)
            .map(|i| nb.row(i).iter().map(|&j| (points[i] - points[j as usize]).norm()).sum::<f64>() / 3.0)
            .collect()
    } else {
        vec![0.01; n]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xFEA7);
    let mut set = GaussianSet::zeros(n, f);
    for k in 0..n {
        set.positions[k * 3..k * 3 + 3].copy_from_slice(points[k].as_slice());
        set.rotations[k * 4] = 1.0;
        let s = spacing[k].max(1e-4).ln();
        set.scales[k * 3..k * 3 + 3].fill(s);
        set.opacities[k] = logit(cfg.init_opacity);
        for v in &mut set.features[k * f..(k + 1) * f] {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    Ok(set)
}

/// Embedding image predicted for a rendered view.
pub fn predicted_embedding(out: &RenderOutput, decoder: Option<&DecoderWeights>, mode: FeatureMode) -> Result<Image> {
    match (mode, decoder) {
        (FeatureMode::Splat, Some(d)) => decode(&out.feature, &out.alpha, d),
        (FeatureMode::Splat, None) => Err(Error::Invalid("feature splatting needs a decoder".into())),
        (FeatureMode::SharedColor, _) => Ok(out.color.clone()),
    }
}

struct Optimizers {
    scene: Vec<(ParamClass, f64, AdamState)>,
    decoder: Option<AdamState>,
    pose: Option<AdamState>,
}

fn pose_target(sample: &DatasetSample, view: usize, dim: usize) -> KeypointSet {
    if dim == 3 {
        sample.keypoints3d.clone()
    } else {
        sample.views[view].keypoints2d.clone()
    }
}

/// Fits Gaussians, the decoder and the pose head jointly by AdamW on
/// `L_image + L_depth + L_pose + L_feature`, cycling over the training
/// views. Scene parameters use per-group rates and no weight decay; the
/// networks use `cfg.weight_decay`. With `checkpoint_dir` set, snapshots go
/// to `checkpoints/iter_NNNNN/` every `cfg.checkpoint_every` iterations.
pub fn optimize_scene(sample: &DatasetSample, cfg: &RunConfig, checkpoint_dir: Option<&Path>) -> Result<SceneFit> {
    if sample.views.len() < 2 {
        return Err(Error::Invalid("scene fitting needs at least two views".into()));
    }
    let heldout = heldout_view(sample);
    let train: Vec<usize> = (0..sample.views.len()).filter(|&v| v != heldout || sample.views.len() <= 2).collect();
    let mut scene = init_scene(sample, cfg)?;
    let mode = cfg.feature_mode;
    let mut decoder = (mode == FeatureMode::Splat && cfg.losses.feature)
        .then(|| DecoderWeights::init(cfg.feature_dim, cfg.embed_dim, cfg.seed ^ 0xDEC));
    let mut pose = if cfg.losses.pose { Some(PoseWeights::init(cfg.backbone, cfg.pose_dim, cfg.seed ^ 0x9053)?) } else { None };
    let pose_idx = sample_indices(scene.len(), cfg.pose_points, cfg.seed ^ 0x1D5)?;

    let lr = &cfg.lr;
    let mut opt = Optimizers {
        scene: [
            (ParamClass::Position, lr.position),
            (ParamClass::Rotation, lr.rotation),
            (ParamClass::Scale, lr.scale),
            (ParamClass::Opacity, lr.opacity),
            (ParamClass::Color, lr.color),
            (ParamClass::Feature, lr.feature),
        ]
        .into_iter()
        .map(|(c, r)| (c, r, AdamState::new(scene.param(c).len())))
        .collect(),
        decoder: decoder.as_ref().map(|d| AdamState::new(d.param_count())),
        pose: pose.as_ref().map(|p| AdamState::new(p.param_count())),
    };

    let heldout_metrics = |scene: &GaussianSet, decoder: Option<&DecoderWeights>| -> Result<(f64, Option<f64>)> {
        let v = &sample.views[heldout];
        let out = render(scene, &v.camera, BACKGROUND)?;
        let p = psnr(&out.color, &v.color)?;
        let mse = if cfg.losses.feature {
            Some(feature_mse(&predicted_embedding(&out, decoder, mode)?, &v.embedding, Some(&v.mask))?)
        } else {
            None
        };
        Ok((p, mse))
    };
    let (psnr_before, embed_mse_before) = heldout_metrics(&scene, decoder.as_ref())?;

    let mut trajectory = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let vi = train[it % train.len()];
        let view = &sample.views[vi];
        let cam = &view.camera;
        let out = render_activated(&scene.activate()?, cam, BACKGROUND);
        let (w, h) = (cam.width, cam.height);
        let mut adjoint = RenderOutput {
            color: Image::new(w, h, 3),
            feature: Image::new(w, h, scene.feature_dim()),
            depth: Image::new(w, h, 1),
            alpha: Image::new(w, h, 1),
        };
        let mut report = LossReport::default();

        if cfg.losses.image {
            let ((l, mae, ls), g) = loss_image_grad_weighted(&out.color, &view.color, &view.mask, cfg.image_beta, cfg.image_gamma)?;
            report.l_image = l;
            report.l_mae = mae;
            report.l_ssim = ls;
            adjoint.color = g;
        }
        if cfg.losses.depth {
            let (l, g) = loss_depth_grad(std::slice::from_ref(&out.depth), &view.depth, &view.mask, cfg.depth_decay)?;
            report.l_depth = l;
            adjoint.depth = g.into_iter().next().expect("one depth step");
        }
        let mut decoder_grad = None;
        if cfg.losses.feature {
            let pred = predicted_embedding(&out, decoder.as_ref(), mode)?;
            let (l, g) = loss_feature_grad(&pred, &view.embedding, &view.mask)?;
            report.l_feature = l;
            match mode {
                FeatureMode::Splat => {
                    let (gw, gf) = decode_backward(&out.feature, &out.alpha, decoder.as_ref().unwrap(), &g)?;
                    adjoint.feature = gf;
                    decoder_grad = Some(gw);
                }
                FeatureMode::SharedColor => {
                    adjoint.color.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b);
                }
            }
        }
        let mut pose_grad = None;
        if let Some(pw) = pose.as_ref() {
            let points: Vec<Vector3<f64>> = pose_idx.iter().map(|&i| scene.position(i)).collect();
            let input = PoseInput::from_world(&points, cfg.backbone, cfg.k)?;
            let trace = forward_trace(&input, pw)?;
            let mut coords = trace.output.clone();
            if pw.dim == 3 {
                for j in coords.chunks_exact_mut(3) {
                    j.iter_mut().zip(input.centroid.iter()).for_each(|(v, c)| *v += c);
                }
            }
            let pred = KeypointSet::new(pw.dim, coords)?;
            let (l, g_out) = loss_pose_grad(&pred, &pose_target(sample, vi, pw.dim))?;
            report.l_pose = l;
            let g = backward_pose(&input, pw, &trace, &g_out);
            pose_grad = Some((world_point_grad(&g, &g_out, pw.dim), g.weights));
        }
        let report = report.finish();
        if !report.total.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss at iteration {it}")));
        }

        let mut grads = backward_render(&scene, cam, BACKGROUND, &adjoint)?.scene;
        let diverged = |e: Error| Error::Diverged(format!("iteration {it}: {e}"));
        if let Some((pts, gw)) = pose_grad {
            for (&i, g) in pose_idx.iter().zip(&pts) {
                for c in 0..3 {
                    grads.positions[i * 3 + c] += g[c];
                }
            }
            let pw = pose.as_mut().unwrap();
            let mut flat = pw.to_flat();
            adam_step(&mut flat, &gw.to_flat(), opt.pose.as_mut().unwrap(), lr.pose, cfg.weight_decay).map_err(diverged)?;
            pw.set_flat(&flat)?;
        }
        if let Some(gw) = decoder_grad {
            let d = decoder.as_mut().unwrap();
            let mut flat = d.to_flat();
            adam_step(&mut flat, &gw.to_flat(), opt.decoder.as_mut().unwrap(), lr.decoder, cfg.weight_decay).map_err(diverged)?;
            d.set_flat(&flat)?;
        }
        for (class, rate, state) in &mut opt.scene {
            adam_step(scene.param_mut(*class), grads.param(*class), state, *rate, 0.0).map_err(diverged)?;
        }
        trajectory.push(report);

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
                let d = dir.join("checkpoints").join(format!("iter_{:05}", it + 1));
                write_file(&d.join("scene.ply"), &super::io::encode_ply(&scene))?;
                if let Some(dec) = &decoder {
                    write_file(&d.join("decoder.ckpt"), &dec.to_checkpoint())?;
                }
                if let Some(p) = &pose {
                    write_file(&d.join("pose.ckpt"), &p.to_checkpoint())?;
                }
            }
        }
    }

    let (psnr_after, embed_mse_after) = heldout_metrics(&scene, decoder.as_ref())?;
    Ok(SceneFit {
        scene,
        decoder,
        pose,
        trajectory,
        heldout_view: heldout,
        psnr_before,
        psnr_after,
        embed_mse_before,
        embed_mse_after,
    })
}
