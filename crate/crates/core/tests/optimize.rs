use hfgauss::losses::LossReport;
use hfgauss::pipeline::posebench::median;
use hfgauss::pipeline::{optimize_scene, FeatureMode, RunConfig};
use hfgauss::scenegen::{default_ring, generate_figure, make_sample, DatasetSample};

fn small_sample(seed: u64) -> DatasetSample {
    make_sample(&generate_figure(seed).unwrap(), &default_ring(64).unwrap(), seed).unwrap()
}

fn small_config() -> RunConfig {
    RunConfig {
        iterations: 200,
        init_gaussians: 400,
        pose_points: 128,
        ..RunConfig::default()
    }
}

fn component_sum(r: &LossReport) -> f64 {
    r.l_image + r.l_depth + r.l_pose + r.l_feature
}

#[test]
fn total_equals_sum_and_loss_decreases() {
    let cfg = small_config();
    let fit = optimize_scene(&small_sample(1), &cfg, None).unwrap();
    assert_eq!(fit.trajectory.len(), cfg.iterations);
    for r in &fit.trajectory {
        assert!((r.total - component_sum(r)).abs() <= 1e-9);
        assert!((r.l_image - (1.6 * r.l_mae + 0.4 * r.l_ssim)).abs() <= 1e-9);
        assert!(r.l_depth > 0.0 && r.l_pose > 0.0 && r.l_feature > 0.0);
    }
    let tenth = cfg.iterations / 10;
    let totals: Vec<f64> = fit.trajectory.iter().map(|r| r.total).collect();
    assert!(median(&totals[cfg.iterations - tenth..]) < median(&totals[..tenth]));
    assert!(fit.psnr_after > fit.psnr_before);
}

#[test]
fn disabled_losses_report_zero() {
    let mut cfg = small_config();
    cfg.iterations = 20;
    cfg.losses.depth = false;
    cfg.losses.pose = false;
    cfg.losses.feature = false;
    let fit = optimize_scene(&small_sample(2), &cfg, None).unwrap();
    assert!(fit.decoder.is_none() && fit.pose.is_none());
    for r in &fit.trajectory {
        assert_eq!((r.l_depth, r.l_pose, r.l_feature), (0.0, 0.0, 0.0));
        assert!(r.l_image > 0.0);
        assert_eq!(r.total, r.l_image);
    }
}

#[test]
fn same_seed_same_trajectory() {
    let mut cfg = small_config();
    cfg.iterations = 30;
    let sample = small_sample(3);
    let a = optimize_scene(&sample, &cfg, None).unwrap();
    let b = optimize_scene(&sample, &cfg, None).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.scene, b.scene);
}

#[test]
fn shared_color_mode_has_no_decoder() {
    let mut cfg = small_config();
    cfg.iterations = 20;
    cfg.losses.pose = false;
    cfg.feature_mode = FeatureMode::SharedColor;
    let fit = optimize_scene(&small_sample(4), &cfg, None).unwrap();
    assert!(fit.decoder.is_none());
    assert_eq!(fit.scene.feature_dim(), 0);
    assert!(fit.embed_mse_after.is_some());
}

#[test]
fn checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.iterations = 10;
    cfg.checkpoint_every = 5;
    optimize_scene(&small_sample(5), &cfg, Some(dir.path())).unwrap();
    for it in ["iter_00005", "iter_00010"] {
        let d = dir.path().join("checkpoints").join(it);
        for f in ["scene.ply", "decoder.ckpt", "pose.ckpt"] {
            assert!(d.join(f).exists(), "{it}/{f}");
        }
    }
}
