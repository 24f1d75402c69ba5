//! Procedural ground truth: articulated Gaussian figures, camera rings and
//! rendered multi-view samples.

mod skeleton;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianSet};
use crate::image::{DepthMap, FeatureImage, Image, Mask, RasterImage};
use crate::keypoints::{KeypointSet, NUM_JOINTS};
use crate::splat::{render, RenderOutput};

pub use skeleton::{bones, forward_kinematics, joint_rotation, rest_offsets, topological_order, JOINT_LIMIT, NO_PARENT, PARENTS};

pub const DEFAULT_GAUSSIANS_PER_BONE: usize = 40;
pub const EMBED_DIM: usize = 3;
pub const DEFAULT_RING_SIZE: usize = 8;
pub const DEFAULT_RING_RADIUS: f64 = 4.5;
pub const DEFAULT_IMAGE_SIZE: usize = 512;
/// Point the camera ring looks at, roughly the middle of a standing figure.
pub const RING_TARGET: [f64; 3] = [0.0, 0.9, 0.0];
pub const BACKGROUND: [f64; 3] = [0.0, 0.0, 0.0];
/// Ground-truth alpha above which a pixel counts as foreground.
pub const MASK_THRESHOLD: f64 = 0.5;

const ROOT_HEIGHT: f64 = 0.95;

/// Bone thickness by child joint.
fn bone_radius(child: usize) -> f64 {
    match child {
        1 => 0.11,
        9 | 12 => 0.08,
        10 | 13 => 0.06,
        2 | 5 => 0.06,
        11 | 14 | 3 | 6 => 0.045,
        4 | 7 => 0.035,
        0 => 0.07,
        _ => 0.03,
    }
}

/// Skeleton pose and Gaussian density of one figure.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureSpec {
    pub parents: [usize; NUM_JOINTS],
    pub offsets: [Vector3<f64>; NUM_JOINTS],
    pub angles: [[f64; 3]; NUM_JOINTS],
    pub root: Vector3<f64>,
    pub yaw: f64,
    pub gaussians_per_bone: usize,
}

impl FigureSpec {
    /// The unposed T-pose at the default root.
    pub fn rest(gaussians_per_bone: usize) -> Self {
        Self {
            parents: PARENTS,
            offsets: rest_offsets(),
            angles: [[0.0; 3]; NUM_JOINTS],
            root: Vector3::new(0.0, ROOT_HEIGHT, 0.0),
            yaw: 0.0,
            gaussians_per_bone,
        }
    }

    /// Seeded pose: bone lengths scaled by a common factor in [0.9, 1.1],
    /// every angle uniform within the joint limit, any heading.
    pub fn random(seed: u64, gaussians_per_bone: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = Self::rest(gaussians_per_bone);
        let size = rng.random_range(0.9..1.1);
        spec.offsets.iter_mut().for_each(|o| *o *= size);
        for a in spec.angles.iter_mut().flatten() {
            *a = rng.random_range(-JOINT_LIMIT..JOINT_LIMIT);
        }
        spec.yaw = rng.random_range(0.0..std::f64::consts::TAU);
        spec
    }

    pub fn keypoints(&self) -> [Vector3<f64>; NUM_JOINTS] {
        forward_kinematics(self.root, self.yaw, &self.offsets, &self.angles)
    }
}

/// A generated figure with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub spec: FigureSpec,
    /// Gaussians whose features hold the surface embedding, so feature
    /// splatting them renders the ground-truth embedding image.
    pub gaussians: GaussianSet,
    pub keypoints: KeypointSet,
    /// Per-Gaussian `(bone / 18, arc position, 0.5)`.
    pub embeddings: Vec<[f64; EMBED_DIM]>,
    /// Bone index of each Gaussian.
    pub bone_of: Vec<usize>,
}

/// Rotation taking the local x axis onto `dir`.
fn align_x(dir: &Vector3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::rotation_between(&Vector3::x(), dir)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI));
    [q.w, q.i, q.j, q.k]
}

fn bone_color(bone: usize, tint: f64) -> Vector3<f64> {
    let h = bone as f64 / 18.0;
    Vector3::new(
        0.55 + 0.35 * (std::f64::consts::TAU * h).cos() * tint,
        0.5 + 0.3 * (std::f64::consts::TAU * (h + 0.33)).cos(),
        0.45 + 0.35 * (std::f64::consts::TAU * (h + 0.67)).cos() * tint,
    )
}

/// Builds the Gaussians of a posed skeleton.
pub fn build_figure(spec: &FigureSpec, tint: f64) -> Result<Figure> {
    if spec.gaussians_per_bone == 0 {
        return Err(Error::Invalid("a figure needs at least one Gaussian per bone".into()));
    }
    let joints = forward_kinematics(spec.root, spec.yaw, &spec.offsets, &spec.angles);
    let n = spec.gaussians_per_bone;
    let bone_list = bones();
    let mut gaussians = Vec::with_capacity(bone_list.len() * n);
    let mut embeddings = Vec::with_capacity(bone_list.len() * n);
    let mut bone_of = Vec::with_capacity(bone_list.len() * n);
    for (b, &(p, c)) in bone_list.iter().enumerate() {
        let seg = joints[c] - joints[p];
        let len = seg.norm();
        let rotation = align_x(&(seg / len));
        let radius = bone_radius(c);
        let along = (0.75 * len / n as f64).max(0.5 * radius);
        for k in 0..n {
            let arc = (k as f64 + 0.5) / n as f64;
            let embedding = [b as f64 / 18.0, arc, 0.5];
            gaussians.push(Gaussian {
                position: joints[p] + seg * arc,
                rotation,
                scale: Vector3::new(along, radius, radius),
                opacity: 0.9,
                color: bone_color(b, tint),
                feature: embedding.to_vec(),
            });
            embeddings.push(embedding);
            bone_of.push(b);
        }
    }
    Ok(Figure {
        spec: spec.clone(),
        gaussians: GaussianSet::from_gaussians(&gaussians, EMBED_DIM)?,
        keypoints: KeypointSet::from_points3(&joints)?,
        embeddings,
        bone_of,
    })
}

/// A randomly posed figure; identical for identical seeds.
pub fn generate_figure(seed: u64) -> Result<Figure> {
    generate_figure_with(seed, DEFAULT_GAUSSIANS_PER_BONE)
}

pub fn generate_figure_with(seed: u64, gaussians_per_bone: usize) -> Result<Figure> {
    let spec = FigureSpec::random(seed, gaussians_per_bone);
    let tint = ChaCha8Rng::seed_from_u64(seed ^ 0xC0105).random_range(0.6..1.0);
    build_figure(&spec, tint)
}

/// `n` cameras evenly spaced on a horizontal circle around `target`, all
/// looking at it, with focal length equal to the image size.
pub fn camera_ring(n: usize, radius: f64, target: Vector3<f64>, image_size: usize) -> Result<Vec<Camera>> {
    if n < 2 {
        return Err(Error::Invalid(format!("a camera ring needs at least 2 cameras, got {n}")));
    }
    if !(radius > 0.0) {
        return Err(Error::Invalid(format!("ring radius must be positive, got {radius}")));
    }
    if image_size == 0 {
        return Err(Error::Invalid("image size must be positive".into()));
    }
    (0..n)
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / n as f64;
            let eye = target + radius * Vector3::new(theta.sin(), 0.0, theta.cos());
            Camera::look_at(eye, target, Vector3::y(), image_size as f64, image_size, image_size)
        })
        .collect()
}

pub fn default_ring(image_size: usize) -> Result<Vec<Camera>> {
    camera_ring(DEFAULT_RING_SIZE, DEFAULT_RING_RADIUS, Vector3::from(RING_TARGET), image_size)
}

/// Ground truth of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewData {
    pub camera: Camera,
    pub color: RasterImage,
    pub depth: DepthMap,
    pub alpha: Image,
    pub mask: Mask,
    pub embedding: FeatureImage,
    pub keypoints2d: KeypointSet,
}

/// Renders one ground-truth view of a figure.
pub fn render_view(figure: &Figure, camera: &Camera) -> Result<ViewData> {
    let RenderOutput {
        color,
        feature,
        depth,
        alpha,
    } = render(&figure.gaussians, camera, BACKGROUND)?;
    let mask = Mask::from_threshold(&alpha, MASK_THRESHOLD);
    Ok(ViewData {
        camera: camera.clone(),
        color,
        depth,
        alpha,
        mask,
        embedding: feature,
        keypoints2d: figure.keypoints.project(camera)?,
    })
}

/// All views of one figure plus the two adjacent source views and a target.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub views: Vec<ViewData>,
    pub keypoints3d: KeypointSet,
    pub source: [usize; 2],
    pub target: usize,
}

impl DatasetSample {
    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }
}

pub fn make_sample(figure: &Figure, cameras: &[Camera], seed: u64) -> Result<DatasetSample> {
    if cameras.len() < 2 {
        return Err(Error::Invalid("a sample needs at least two views".into()));
    }
    let views = cameras.par_iter().map(|c| render_view(figure, c)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cameras.len();
    let first = rng.random_range(0..n);
    Ok(DatasetSample {
        views,
        keypoints3d: figure.keypoints.clone(),
        source: [first, (first + 1) % n],
        target: rng.random_range(0..n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::render;

    #[test]
    fn figure_is_deterministic() {
        assert_eq!(generate_figure(3).unwrap(), generate_figure(3).unwrap());
        assert_ne!(generate_figure(3).unwrap().keypoints, generate_figure(4).unwrap().keypoints);
    }

    #[test]
    fn rest_pose_keypoints_follow_offsets() {
        let spec = FigureSpec::rest(4);
        let fig = build_figure(&spec, 1.0).unwrap();
        let off = rest_offsets();
        let wrist = spec.root + off[1] + off[5] + off[6] + off[7];
        assert!((fig.keypoints.joint3(7) - wrist).norm() < 1e-12);
        assert_eq!(fig.gaussians.len(), 18 * 4);
    }

    #[test]
    fn gaussians_sit_on_their_bones() {
        let fig = generate_figure_with(9, 10).unwrap();
        let bl = bones();
        for i in 0..fig.gaussians.len() {
            let (p, c) = bl[fig.bone_of[i]];
            let (a, b) = (fig.keypoints.joint3(p), fig.keypoints.joint3(c));
            let x = fig.gaussians.position(i);
            let t = ((x - a).dot(&(b - a)) / (b - a).norm_squared()).clamp(0.0, 1.0);
            assert!((a + (b - a) * t - x).norm() < 1e-9);
            let e = fig.embeddings[i];
            assert!(e.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn ring_geometry() {
        let target = Vector3::new(0.0, 0.9, 0.0);
        let ring = camera_ring(8, 3.0, target, 64).unwrap();
        let c0 = ring[0].center() - target;
        let c1 = ring[1].center() - target;
        assert!((c0.angle(&c1).to_degrees() - 45.0).abs() < 1e-9);
        let four = camera_ring(4, 3.0, target, 64).unwrap();
        assert!((four[0].center() + four[2].center() - 2.0 * target).norm() < 1e-12);
        for cam in &ring {
            let p = cam.project(&target).unwrap();
            assert!((p.x - 32.0).abs() < 1e-9 && (p.y - 32.0).abs() < 1e-9);
        }
        assert!(camera_ring(8, 0.0, target, 64).is_err());
        assert!(camera_ring(1, 1.0, target, 64).is_err());
    }

    #[test]
    fn sample_ground_truth_is_consistent() {
        let fig = generate_figure_with(1, 8).unwrap();
        let cams = default_ring(48).unwrap();
        let s = make_sample(&fig, &cams, 5).unwrap();
        assert_eq!(s.source[1], (s.source[0] + 1) % 8);
        for v in &s.views {
            for (i, &m) in v.mask.data.iter().enumerate() {
                if m {
                    assert!(v.depth.data[i] > 0.0);
                }
            }
            let again = render(&fig.gaussians, &v.camera, BACKGROUND).unwrap();
            assert_eq!(again.color, v.color);
            for j in 0..NUM_JOINTS {
                let p = v.keypoints2d.joint2(j);
                assert!(p.x >= 0.0 && p.x < 48.0 && p.y >= 0.0 && p.y < 48.0, "joint {j} at {p:?}");
            }
        }
    }
}
