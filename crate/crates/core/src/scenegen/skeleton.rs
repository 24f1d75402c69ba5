//! The articulated 19-joint skeleton and its forward kinematics.
//!
//! World frame is y-up; the rest pose is a T-pose facing +z with the pelvis
//! as root.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::keypoints::*;

pub const NO_PARENT: usize = usize::MAX;

/// Parent joint of each joint, in [`JOINT_NAMES`] order.
pub const PARENTS: [usize; NUM_JOINTS] = [
    NECK,           // nose
    PELVIS,         // neck
    NECK,           // right shoulder
    RIGHT_SHOULDER, // right elbow
    3,              // right wrist
    NECK,           // left shoulder
    LEFT_SHOULDER,  // left elbow
    6,              // left wrist
    NO_PARENT,      // pelvis
    PELVIS,         // right hip
    RIGHT_HIP,      // right knee
    10,             // right ankle
    PELVIS,         // left hip
    12,             // left knee
    13,             // left ankle
    NOSE,           // right eye
    NOSE,           // left eye
    15,             // right ear
    16,             // left ear
];

/// Joint limit for every rotational degree of freedom.
pub const JOINT_LIMIT: f64 = std::f64::consts::PI / 3.0;

/// Rest offset of each joint from its parent (zero for the root).
pub fn rest_offsets() -> [Vector3<f64>; NUM_JOINTS] {
    let v = Vector3::new;
    [
        v(0.0, 0.20, 0.06),
        v(0.0, 0.50, 0.0),
        v(-0.18, 0.0, 0.0),
        v(-0.28, 0.0, 0.0),
        v(-0.25, 0.0, 0.0),
        v(0.18, 0.0, 0.0),
        v(0.28, 0.0, 0.0),
        v(0.25, 0.0, 0.0),
        v(0.0, 0.0, 0.0),
        v(-0.10, -0.06, 0.0),
        v(0.0, -0.42, 0.0),
        v(0.0, -0.40, 0.0),
        v(0.10, -0.06, 0.0),
        v(0.0, -0.42, 0.0),
        v(0.0, -0.40, 0.0),
        v(-0.035, 0.035, 0.02),
        v(0.035, 0.035, 0.02),
        v(-0.05, -0.01, -0.07),
        v(0.05, -0.01, -0.07),
    ]
}

/// Joints ordered so every parent precedes its children.
pub fn topological_order() -> Vec<usize> {
    let mut order = vec![PELVIS];
    let mut i = 0;
    while i < order.len() {
        let p = order[i];
        order.extend((0..NUM_JOINTS).filter(|&j| PARENTS[j] == p));
        i += 1;
    }
    order
}

/// Bones as `(parent, child)` pairs, indexed by child order with the root
/// skipped; there are 18.
pub fn bones() -> Vec<(usize, usize)> {
    (0..NUM_JOINTS).filter(|&j| PARENTS[j] != NO_PARENT).map(|j| (PARENTS[j], j)).collect()
}

/// Local rotation from per-axis angles, applied x first, then y, then z.
pub fn joint_rotation(angles: [f64; 3]) -> Matrix3<f64> {
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), angles[2])
        * Rotation3::from_axis_angle(&Vector3::y_axis(), angles[1])
        * Rotation3::from_axis_angle(&Vector3::x_axis(), angles[0]);
    r.into_inner()
}

/// World joint positions. Each joint's rotation acts on the offsets of its
/// descendants; the root additionally turns by `yaw` about the vertical.
pub fn forward_kinematics(
    root: Vector3<f64>,
    yaw: f64,
    offsets: &[Vector3<f64>; NUM_JOINTS],
    angles: &[[f64; 3]; NUM_JOINTS],
) -> [Vector3<f64>; NUM_JOINTS] {
    let mut pos = [Vector3::zeros(); NUM_JOINTS];
    let mut frame = [Matrix3::identity(); NUM_JOINTS];
    let base = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw).into_inner();
    for j in topological_order() {
        let p = PARENTS[j];
        if p == NO_PARENT {
            pos[j] = root;
            frame[j] = base * joint_rotation(angles[j]);
        } else {
            pos[j] = pos[p] + frame[p] * offsets[j];
            frame[j] = frame[p] * joint_rotation(angles[j]);
        }
    }
    pos
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeleton_is_a_tree() {
        assert_eq!(bones().len(), NUM_JOINTS - 1);
        let order = topological_order();
        assert_eq!(order.len(), NUM_JOINTS);
        let mut seen = order.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), NUM_JOINTS);
    }

    /// Walks each joint's ancestor chain and multiplies rotations explicitly.
    fn chain_oracle(root: Vector3<f64>, yaw: f64, angles: &[[f64; 3]; NUM_JOINTS], j: usize) -> Vector3<f64> {
        let offsets = rest_offsets();
        let mut chain = vec![j];
        while PARENTS[*chain.last().unwrap()] != NO_PARENT {
            chain.push(PARENTS[*chain.last().unwrap()]);
        }
        chain.reverse();
        let (c, s) = (yaw.cos(), yaw.sin());
        let mut rot = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        let mut p = root;
        for (k, &joint) in chain.iter().enumerate() {
            if k > 0 {
                p += rot * offsets[joint];
            }
            let [ax, ay, az] = angles[joint];
            let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ax.cos(), -ax.sin(), 0.0, ax.sin(), ax.cos());
            let ry = Matrix3::new(ay.cos(), 0.0, ay.sin(), 0.0, 1.0, 0.0, -ay.sin(), 0.0, ay.cos());
            let rz = Matrix3::new(az.cos(), -az.sin(), 0.0, az.sin(), az.cos(), 0.0, 0.0, 0.0, 1.0);
            rot = rot * rz * ry * rx;
        }
        p
    }

    #[test]
    fn matches_chain_oracle() {
        let mut angles = [[0.0; 3]; NUM_JOINTS];
        for (j, a) in angles.iter_mut().enumerate() {
            *a = [0.3 * (j as f64).sin(), -0.5 * (j as f64 * 0.7).cos(), 0.8 * (j as f64 * 1.3).sin()];
        }
        let root = Vector3::new(0.1, 0.9, -0.2);
        let pos = forward_kinematics(root, 0.7, &rest_offsets(), &angles);
        for j in 0..NUM_JOINTS {
            assert!((pos[j] - chain_oracle(root, 0.7, &angles, j)).norm() < 1e-6);
        }
    }

    #[test]
    fn rest_pose_is_sum_of_offsets() {
        let pos = forward_kinematics(Vector3::zeros(), 0.0, &rest_offsets(), &[[0.0; 3]; NUM_JOINTS]);
        let off = rest_offsets();
        assert!((pos[4] - (off[1] + off[2] + off[3] + off[4])).norm() < 1e-12);
        assert!((pos[18] - (off[1] + off[0] + off[16] + off[18])).norm() < 1e-12);
    }
}
