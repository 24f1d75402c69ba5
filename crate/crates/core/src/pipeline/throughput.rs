//! Forward-rendering throughput on a synthetic cloud of small Gaussians.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianSet, DEFAULT_FEATURE_DIM};
use crate::splat::render_activated;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub gaussians: usize,
    pub width: usize,
    pub height: usize,
    pub feature_dim: usize,
    pub frames: usize,
    pub threads: usize,
    pub seconds: f64,
    pub fps: f64,
}

/// `n` Gaussians scattered through the frustum of `cam`, a few pixels wide.
pub fn benchmark_scene(n: usize, feature_dim: usize, cam: &Camera, seed: u64) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = GaussianSet::zeros(n, feature_dim);
    let (hx, hy) = (cam.cx / cam.fx, cam.cy / cam.fy);
    for i in 0..n {
        let z: f64 = rng.random_range(3.0..6.0);
        set.positions[i * 3] = rng.random_range(-hx..hx) * z;
        set.positions[i * 3 + 1] = rng.random_range(-hy..hy) * z;
        set.positions[i * 3 + 2] = z;
        for v in &mut set.rotations[i * 4..i * 4 + 4] {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in &mut set.scales[i * 3..i * 3 + 3] {
            *v = rng.random_range(0.004f64..0.02).ln();
        }
        set.opacities[i] = rng.random_range(-1.0..3.0);
    }
    for v in set.colors.iter_mut().chain(set.features.iter_mut()) {
        *v = rng.random_range(-2.0..2.0);
    }
    set
}

/// Renders `frames` frames of a `gaussians`-strong scene at `size`×`size`
/// and reports the mean frame rate. Activation happens once, outside the
/// timed loop.
pub fn measure_throughput(gaussians: usize, size: usize, frames: usize, seed: u64) -> Result<ThroughputReport> {
    if frames == 0 || size == 0 {
        return Err(Error::Invalid("throughput needs at least one frame of non-zero size".into()));
    }
    let cam = Camera::identity(size as f64, size as f64, size as f64 / 2.0, size as f64 / 2.0, size, size);
    let act = benchmark_scene(gaussians, DEFAULT_FEATURE_DIM, &cam, seed).activate()?;
    let start = Instant::now();
    for _ in 0..frames {
        std::hint::black_box(render_activated(&act, &cam, [0.0; 3]));
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(ThroughputReport {
        gaussians,
        width: size,
        height: size,
        feature_dim: DEFAULT_FEATURE_DIM,
        frames,
        threads: rayon::current_num_threads(),
        seconds,
        fps: frames as f64 / seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_benchmark_reports_positive_rate() {
        let r = measure_throughput(500, 64, 2, 1).unwrap();
        assert!(r.fps > 0.0 && r.seconds > 0.0);
        assert_eq!((r.gaussians, r.width, r.frames), (500, 64, 2));
    }

    #[test]
    fn scene_projects_inside_the_image() {
        let cam = Camera::identity(64.0, 64.0, 32.0, 32.0, 64, 64);
        let set = benchmark_scene(200, 2, &cam, 3);
        for i in 0..set.len() {
            let uv = cam.project(&set.position(i)).unwrap();
            assert!((0.0..=64.0).contains(&uv.x) && (0.0..=64.0).contains(&uv.y));
        }
    }
}
