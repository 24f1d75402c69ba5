//! Keypoint regression from point clouds.
//!
//! Three backbones share one head design:
//!
//! * `PointNet`: a shared per-point MLP (3→64→128→256) max-pooled over points.
//! * `Dgcnn`: an edge MLP (6→64→128) over kNN edges `(xⱼ − xᵢ ‖ xᵢ)`, max-pooled
//!   over neighbors and then over points.
//! * `Hybrid`: both branches concatenated into a 384-wide descriptor.
//!
//! The head (→256→128→19·D) is linear at the output. Branch and hidden
//! layers use a leaky ReLU.

mod knn;
mod net;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, take_tensor, Tensor, POSE_MAGIC};
use crate::error::{Error, Result};
use crate::keypoints::NUM_JOINTS;
use crate::nn::Dense;

pub use crate::keypoints::KeypointSet;
pub use knn::{knn_graph, NeighborTable, DEFAULT_K};
pub use net::{
    activation_fingerprint, backward_pose, forward_pose, forward_trace, pose_loss_grad, world_point_grad, PoseGradient,
    PoseInput, PoseTrace,
};
pub use train::{evaluate_mpjpe, train_pose, EpochLog, PoseSample, PoseTrainConfig};

pub const GLOBAL_WIDTHS: [usize; 4] = [3, 64, 128, 256];
pub const EDGE_WIDTHS: [usize; 3] = [6, 64, 128];
pub const HEAD_HIDDEN: [usize; 2] = [256, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    PointNet,
    Dgcnn,
    Hybrid,
}

impl Backbone {
    pub const ALL: [Backbone; 3] = [Backbone::PointNet, Backbone::Dgcnn, Backbone::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Backbone::PointNet => "pointnet",
            Backbone::Dgcnn => "dgcnn",
            Backbone::Hybrid => "hybrid",
        }
    }

    pub fn uses_global(self) -> bool {
        matches!(self, Backbone::PointNet | Backbone::Hybrid)
    }

    pub fn uses_edges(self) -> bool {
        matches!(self, Backbone::Dgcnn | Backbone::Hybrid)
    }

    /// Width of the descriptor fed to the head.
    pub fn descriptor_width(self) -> usize {
        let g = if self.uses_global() { GLOBAL_WIDTHS[3] } else { 0 };
        let e = if self.uses_edges() { EDGE_WIDTHS[2] } else { 0 };
        g + e
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointnet" => Ok(Backbone::PointNet),
            "dgcnn" => Ok(Backbone::Dgcnn),
            "hybrid" => Ok(Backbone::Hybrid),
            other => Err(Error::Config(format!("unknown backbone {other:?}"))),
        }
    }
}

/// All learnable tensors of one backbone. Unused branches are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseWeights {
    pub backbone: Backbone,
    pub dim: usize,
    pub global: Vec<Dense>,
    pub edge: Vec<Dense>,
    pub head: Vec<Dense>,
}

fn layer_chain(widths: &[usize], mut make: impl FnMut(usize, usize) -> Dense) -> Vec<Dense> {
    widths.windows(2).map(|w| make(w[0], w[1])).collect()
}

impl PoseWeights {
    fn build(backbone: Backbone, dim: usize, mut make: impl FnMut(usize, usize) -> Dense) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Shape(format!("keypoint dimension {dim} (expected 2 or 3)")));
        }
        let global = if backbone.uses_global() { layer_chain(&GLOBAL_WIDTHS, &mut make) } else { Vec::new() };
        let edge = if backbone.uses_edges() { layer_chain(&EDGE_WIDTHS, &mut make) } else { Vec::new() };
        let head_widths = [backbone.descriptor_width(), HEAD_HIDDEN[0], HEAD_HIDDEN[1], NUM_JOINTS * dim];
        let head = layer_chain(&head_widths, &mut make);
        Ok(Self {
            backbone,
            dim,
            global,
            edge,
            head,
        })
    }

    /// Seeded uniform initialization.
    pub fn init(backbone: Backbone, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(backbone, dim, |i, o| Dense::init(i, o, &mut rng))
    }

    pub fn zeros(backbone: Backbone, dim: usize) -> Result<Self> {
        Self::build(backbone, dim, Dense::zeros)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.backbone, self.dim).expect("shape already validated")
    }

    /// Layers in a fixed order with their checkpoint names.
    pub fn layers(&self) -> Vec<(String, &Dense)> {
        let mut out = Vec::new();
        for (prefix, layers) in [("global", &self.global), ("edge", &self.edge), ("head", &self.head)] {
            for (i, l) in layers.iter().enumerate() {
                out.push((format!("{prefix}.{i}"), l));
            }
        }
        out
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.global.iter_mut().chain(self.edge.iter_mut()).chain(self.head.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.param_count()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::zeros(self.backbone, self.dim)?;
        let shapes = |w: &PoseWeights| -> Vec<(usize, usize)> {
            w.layers().iter().map(|(_, l)| (l.fan_in, l.fan_out)).collect()
        };
        if shapes(self) != shapes(&expected) {
            return Err(Error::Shape(format!("{} pose weights have the wrong layer shapes", self.backbone)));
        }
        for (name, l) in self.layers() {
            l.check(&name)?;
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, l) in self.layers() {
            l.flatten_into(&mut out);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!("{} values for {} pose parameters", flat.len(), self.param_count())));
        }
        let mut rest = flat;
        for l in self.layers_mut() {
            rest = l.assign_from(rest);
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &PoseWeights) {
        for (a, b) in self.layers_mut().zip(other.layers().into_iter().map(|(_, l)| l)) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in self.layers_mut() {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        for (name, l) in self.layers() {
            tensors.push(Tensor::new(format!("{name}.weight"), l.fan_in, l.fan_out, &l.weight));
            tensors.push(Tensor::new(format!("{name}.bias"), 1, l.fan_out, &l.bias));
        }
        checkpoint::encode(POSE_MAGIC, &tensors)
    }

    /// Restores weights; the backbone and keypoint dimension are inferred
    /// from the stored layer names and shapes.
    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let mut tensors = checkpoint::decode(bytes, POSE_MAGIC)?;
        let has = |p: &str| tensors.iter().any(|t| t.name.starts_with(p));
        let backbone = match (has("global."), has("edge.")) {
            (true, true) => Backbone::Hybrid,
            (true, false) => Backbone::PointNet,
            (false, true) => Backbone::Dgcnn,
            (false, false) => return Err(Error::Shape("checkpoint has no branch layers".into())),
        };
        let out = tensors
            .iter()
            .find(|t| t.name == "head.2.weight")
            .ok_or_else(|| Error::Shape("checkpoint has no output layer".into()))?;
        let mut w = Self::zeros(backbone, out.cols / NUM_JOINTS)?;
        let names: Vec<String> = w.layers().into_iter().map(|(n, _)| n).collect();
        for (name, layer) in names.iter().zip(w.layers_mut()) {
            let wt = take_tensor(&mut tensors, &format!("{name}.weight"))?;
            let bt = take_tensor(&mut tensors, &format!("{name}.bias"))?;
            if (wt.rows, wt.cols) != (layer.fan_in, layer.fan_out) || bt.data.len() != layer.fan_out {
                return Err(Error::Shape(format!("checkpoint layer {name} has the wrong shape")));
            }
            layer.weight = wt.to_f64();
            layer.bias = bt.to_f64();
        }
        if let Some(extra) = tensors.first() {
            return Err(Error::Shape(format!("unexpected checkpoint tensor {}", extra.name)));
        }
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head_params(width: usize, dim: usize) -> usize {
        let w = [width, 256, 128, NUM_JOINTS * dim];
        w.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    #[test]
    fn hybrid_parameter_count_decomposes() {
        for dim in [2, 3] {
            let count = |b| PoseWeights::zeros(b, dim).unwrap().param_count();
            let (pn, dg, hy) = (count(Backbone::PointNet), count(Backbone::Dgcnn), count(Backbone::Hybrid));
            let delta = head_params(384, dim) as i64 - head_params(256, dim) as i64 - head_params(128, dim) as i64;
            assert_eq!(hy as i64, pn as i64 + dg as i64 + delta);
            let global = 3 * 64 + 64 + 64 * 128 + 128 + 128 * 256 + 256;
            assert_eq!(pn, global + head_params(256, dim));
        }
    }

    #[test]
    fn flat_round_trip() {
        let w = PoseWeights::init(Backbone::Hybrid, 3, 5).unwrap();
        let mut z = w.zeros_like();
        z.set_flat(&w.to_flat()).unwrap();
        assert_eq!(z, w);
    }

    #[test]
    fn checkpoint_round_trip() {
        for b in Backbone::ALL {
            let mut w = PoseWeights::init(b, 2, 1).unwrap();
            // Quantize so the f32 container is lossless.
            let q: Vec<f64> = w.to_flat().iter().map(|&v| v as f32 as f64).collect();
            w.set_flat(&q).unwrap();
            let back = PoseWeights::from_checkpoint(&w.to_checkpoint()).unwrap();
            assert_eq!(back, w);
        }
    }

    #[test]
    fn backbone_names_parse() {
        for b in Backbone::ALL {
            assert_eq!(b.name().parse::<Backbone>().unwrap(), b);
        }
        assert!("transformer".parse::<Backbone>().is_err());
    }
}
