//! Depth-map unprojection and point sampling for the pose network.

use nalgebra::Vector3;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{DepthMap, Mask};

/// Number of points fed to the pose network.
pub const DEFAULT_SAMPLE_SIZE: usize = 2048;

/// World-frame points, optionally tagged with the view they came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub views: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, views: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vector3<f64> = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    pub fn tagged(mut self, view: u32) -> Self {
        self.views = Some(vec![view; self.points.len()]);
        self
    }

    /// Flat `[x0, y0, z0, x1, ...]` copy.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }
}

/// Lifts every masked pixel with positive depth to a world-frame point,
/// scanning rows top to bottom.
pub fn unproject_depth(depth: &DepthMap, mask: &Mask, cam: &Camera) -> Result<PointCloud> {
    unproject_pixels(depth, mask, cam).map(|(cloud, _)| cloud)
}

/// [`unproject_depth`] together with the linear index of the pixel each
/// point came from.
pub fn unproject_pixels(depth: &DepthMap, mask: &Mask, cam: &Camera) -> Result<(PointCloud, Vec<usize>)> {
    if depth.channels != 1 {
        return Err(Error::Shape(format!("depth map has {} channels", depth.channels)));
    }
    mask.check_matches(depth)?;
    if depth.width != cam.width || depth.height != cam.height {
        return Err(Error::Shape(format!(
            "depth {}x{} vs camera {}x{}",
            depth.width, depth.height, cam.width, cam.height
        )));
    }
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.get(u, v, 0);
            if !mask.get(u, v) || d <= 0.0 {
                continue;
            }
            let p = Vector3::new((u as f64 - cam.cx) * d / cam.fx, (v as f64 - cam.cy) * d / cam.fy, d);
            points.push(cam.to_world(&p));
            pixels.push(v * depth.width + u);
        }
    }
    Ok((PointCloud::new(points), pixels))
}

/// Concatenates two clouds, left points first.
pub fn merge(left: &PointCloud, right: &PointCloud) -> PointCloud {
    let mut points = left.points.clone();
    points.extend_from_slice(&right.points);
    let views = match (&left.views, &right.views) {
        (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
        _ => None,
    };
    PointCloud { points, views }
}

/// Indices of a seeded sample of `n` out of `len` items: without
/// replacement when `len >= n`, with replacement otherwise.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::NoForegroundPoints);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(if len >= n {
        index::sample(&mut rng, len, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..len)).collect()
    })
}

/// A centered sample and the centroid that was removed.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCloud {
    pub cloud: PointCloud,
    pub centroid: Vector3<f64>,
}

/// Draws `n` points and centers them on their centroid.
pub fn sample(cloud: &PointCloud, n: usize, seed: u64) -> Result<SampledCloud> {
    let idx = sample_indices(cloud.len(), n, seed)?;
    let picked = PointCloud {
        points: idx.iter().map(|&i| cloud.points[i]).collect(),
        views: cloud.views.as_ref().map(|v| idx.iter().map(|&i| v[i]).collect()),
    };
    Ok(center(picked))
}

/// Subtracts the centroid from every point.
pub fn center(mut cloud: PointCloud) -> SampledCloud {
    let centroid = cloud.centroid().unwrap_or_else(Vector3::zeros);
    cloud.points.iter_mut().for_each(|p| *p -= centroid);
    SampledCloud { cloud, centroid }
}
