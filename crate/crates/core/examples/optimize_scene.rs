//! Fits Gaussians, the feature decoder and the pose head to one synthetic
//! figure and reports the held-out view before and after.
//!
//! cargo run --example optimize_scene -- [iterations] [image_size]

use hfgauss::pipeline::{optimize_scene, RunConfig};
use hfgauss::scenegen::{default_ring, generate_figure, make_sample};

fn main() -> hfgauss::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(300, |s| s.parse().expect("iterations"));
    let size = args.next().map_or(128, |s| s.parse().expect("image size"));

    let sample = make_sample(&generate_figure(0)?, &default_ring(size)?, 0)?;
    let cfg = RunConfig {
        iterations,
        init_gaussians: 1000,
        pose_points: 256,
        ..RunConfig::default()
    };
    let fit = optimize_scene(&sample, &cfg, None)?;
    for (i, r) in fit.trajectory.iter().enumerate().step_by((iterations / 10).max(1)) {
        println!(
            "{i:5} total {:.4}  image {:.4}  depth {:.4}  pose {:.4}  feature {:.4}",
            r.total, r.l_image, r.l_depth, r.l_pose, r.l_feature
        );
    }
    println!(
        "held-out view {}: PSNR {:.2} -> {:.2} dB, embedding MSE {:.4} -> {:.4}",
        fit.heldout_view,
        fit.psnr_before,
        fit.psnr_after,
        fit.embed_mse_before.unwrap_or(f64::NAN),
        fit.embed_mse_after.unwrap_or(f64::NAN)
    );
    Ok(())
}
