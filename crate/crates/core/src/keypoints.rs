//! The 19-joint body keypoint layout and keypoint containers.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 19;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "pelvis",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
];

pub const NOSE: usize = 0;
pub const NECK: usize = 1;
pub const RIGHT_SHOULDER: usize = 2;
pub const LEFT_SHOULDER: usize = 5;
pub const PELVIS: usize = 8;
pub const RIGHT_HIP: usize = 9;

/// 19 joints of dimension 2 (pixels) or 3 (world units), in
/// [`JOINT_NAMES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub dim: usize,
    /// `19 × dim`, row-major.
    pub coords: Vec<f64>,
}

impl KeypointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        let set = Self { dim, coords };
        set.validate()?;
        Ok(set)
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            coords: vec![0.0; NUM_JOINTS * dim],
        }
    }

    pub fn from_points3(points: &[Vector3<f64>]) -> Result<Self> {
        Self::new(3, points.iter().flat_map(|p| p.iter().copied()).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::Shape(format!("keypoint dimension {} (expected 2 or 3)", self.dim)));
        }
        if self.coords.len() != NUM_JOINTS * self.dim {
            return Err(Error::Shape(format!(
                "{} keypoint values, expected {}",
                self.coords.len(),
                NUM_JOINTS * self.dim
            )));
        }
        if self.coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("keypoints"));
        }
        Ok(())
    }

    pub fn joint(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn joint3(&self, i: usize) -> Vector3<f64> {
        debug_assert_eq!(self.dim, 3);
        Vector3::from_column_slice(self.joint(i))
    }

    pub fn joint2(&self, i: usize) -> Vector2<f64> {
        Vector2::new(self.coords[i * self.dim], self.coords[i * self.dim + 1])
    }

    /// Projects 3D keypoints into pixel coordinates.
    pub fn project(&self, cam: &Camera) -> Result<KeypointSet> {
        if self.dim != 3 {
            return Err(Error::Shape("only 3D keypoints can be projected".into()));
        }
        let mut coords = Vec::with_capacity(NUM_JOINTS * 2);
        for i in 0..NUM_JOINTS {
            let p = cam.to_camera(&self.joint3(i));
            if p.z <= 0.0 {
                return Err(Error::Invalid(format!("joint {} is behind the camera", JOINT_NAMES[i])));
            }
            coords.push(cam.fx * p.x / p.z + cam.cx);
            coords.push(cam.fy * p.y / p.z + cam.cy);
        }
        KeypointSet::new(2, coords)
    }

    pub fn translated(&self, offset: &[f64]) -> KeypointSet {
        let mut out = self.clone();
        for j in out.coords.chunks_exact_mut(self.dim) {
            for (v, o) in j.iter_mut().zip(offset) {
                *v += o;
            }
        }
        out
    }
}
