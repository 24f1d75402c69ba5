use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use nalgebra::Vector3;

use super::{knn_graph, Backbone, NeighborTable, PoseWeights, EDGE_WIDTHS, GLOBAL_WIDTHS};
use crate::error::{Error, Result};
use crate::keypoints::{KeypointSet, NUM_JOINTS};
use crate::losses::loss_pose_grad;
use crate::nn::{axpy, leaky_relu, leaky_relu_grad, Dense};
use crate::unproject::{center, PointCloud, SampledCloud};

/// A centered cloud ready for the network, with its kNN graph when the
/// backbone needs one.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseInput {
    pub points: Vec<Vector3<f64>>,
    pub centroid: Vector3<f64>,
    pub neighbors: Option<NeighborTable>,
}

impl PoseInput {
    pub fn new(sampled: &SampledCloud, backbone: Backbone, k: usize) -> Result<Self> {
        let points = sampled.cloud.points.clone();
        if points.is_empty() {
            return Err(Error::NoForegroundPoints);
        }
        let neighbors = if backbone.uses_edges() { Some(knn_graph(&points, k)?) } else { None };
        Ok(Self {
            points,
            centroid: sampled.centroid,
            neighbors,
        })
    }

    /// Centers world-frame points and builds the input.
    pub fn from_world(points: &[Vector3<f64>], backbone: Backbone, k: usize) -> Result<Self> {
        Self::new(&center(PointCloud::new(points.to_vec())), backbone, k)
    }
}

/// Channelwise maximum of a branch's last pre-activation and where it came
/// from (a point index, or an edge index `i·k + slot`).
#[derive(Debug, Clone, PartialEq)]
struct BranchMax {
    pre: Vec<f64>,
    arg: Vec<usize>,
}

impl BranchMax {
    fn new(width: usize) -> Self {
        Self {
            pre: vec![f64::NEG_INFINITY; width],
            arg: vec![0; width],
        }
    }

    #[inline]
    fn update(&mut self, z: &[f64], source: usize) {
        for (c, &v) in z.iter().enumerate() {
            if v > self.pre[c] {
                self.pre[c] = v;
                self.arg[c] = source;
            }
        }
    }

    /// Channels grouped by source, in ascending source order.
    fn by_source(&self, grad: &[f64]) -> BTreeMap<usize, Vec<(usize, f64)>> {
        let mut map: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for (c, (&src, &g)) in self.arg.iter().zip(grad).enumerate() {
            map.entry(src).or_default().push((c, g));
        }
        map
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrace {
    global: Option<BranchMax>,
    edge: Option<BranchMax>,
    head_in: Vec<f64>,
    head_pre: Vec<Vec<f64>>,
    /// Raw network output, `19 × D`, before the centroid is added back.
    pub output: Vec<f64>,
}

fn global_forward(points: &[Vector3<f64>], layers: &[Dense]) -> BranchMax {
    let [_, w1, w2, w3] = GLOBAL_WIDTHS;
    let mut best = BranchMax::new(w3);
    let (mut h1, mut h2, mut z3) = (vec![0.0; w1], vec![0.0; w2], vec![0.0; w3]);
    for (p, x) in points.iter().enumerate() {
        layers[0].forward_into(x.as_slice(), &mut h1);
        h1.iter_mut().for_each(|v| *v = leaky_relu(*v));
        layers[1].forward_into(&h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = leaky_relu(*v));
        layers[2].forward_into(&h2, &mut z3);
        best.update(&z3, p);
    }
    best
}

/// The first edge layer acting on `(xⱼ − xᵢ ‖ xᵢ)` splits into `A·xⱼ` and
/// `(B − A)·xᵢ + b`, each computed once per point.
fn edge_forward(points: &[Vector3<f64>], nbrs: &NeighborTable, layers: &[Dense]) -> BranchMax {
    let [_, w1, w2] = EDGE_WIDTHS;
    let first = &layers[0];
    let n = points.len();
    let mut from_j = vec![0.0; n * w1];
    let mut from_i = vec![0.0; n * w1];
    for (p, x) in points.iter().enumerate() {
        let a = &mut from_j[p * w1..(p + 1) * w1];
        for r in 0..3 {
            axpy(x[r], first.row(r), a);
        }
        let b = &mut from_i[p * w1..(p + 1) * w1];
        b.copy_from_slice(&first.bias);
        for r in 0..3 {
            axpy(x[r], first.row(r + 3), b);
            axpy(-x[r], first.row(r), b);
        }
    }
    let mut best = BranchMax::new(w2);
    let (mut h1, mut z2) = (vec![0.0; w1], vec![0.0; w2]);
    for i in 0..n {
        let bi = &from_i[i * w1..(i + 1) * w1];
        for (slot, &j) in nbrs.row(i).iter().enumerate() {
            let aj = &from_j[j as usize * w1..(j as usize + 1) * w1];
            for ((h, a), b) in h1.iter_mut().zip(aj).zip(bi) {
                *h = leaky_relu(a + b);
            }
            layers[1].forward_into(&h1, &mut z2);
            best.update(&z2, i * nbrs.k + slot);
        }
    }
    best
}

fn edge_feature(points: &[Vector3<f64>], i: usize, j: usize) -> [f64; 6] {
    let (xi, xj) = (points[i], points[j]);
    [xj.x - xi.x, xj.y - xi.y, xj.z - xi.z, xi.x, xi.y, xi.z]
}

fn check_input(input: &PoseInput, w: &PoseWeights) -> Result<()> {
    w.validate()?;
    if input.points.is_empty() {
        return Err(Error::NoForegroundPoints);
    }
    if w.backbone.uses_edges() {
        let nbrs = input
            .neighbors
            .as_ref()
            .ok_or_else(|| Error::Invalid("edge branch needs a neighbor table".into()))?;
        if nbrs.len() != input.points.len() {
            return Err(Error::Shape("neighbor table does not match the cloud".into()));
        }
    }
    Ok(())
}

/// Runs the network and keeps what the backward pass needs.
pub fn forward_trace(input: &PoseInput, w: &PoseWeights) -> Result<PoseTrace> {
    check_input(input, w)?;
    let global = w.backbone.uses_global().then(|| global_forward(&input.points, &w.global));
    let edge = w
        .backbone
        .uses_edges()
        .then(|| edge_forward(&input.points, input.neighbors.as_ref().unwrap(), &w.edge));
    let head_in: Vec<f64> = global
        .iter()
        .chain(edge.iter())
        .flat_map(|b| b.pre.iter().map(|&v| leaky_relu(v)))
        .collect();
    let mut head_pre = Vec::with_capacity(w.head.len());
    let mut x = head_in.clone();
    for (li, layer) in w.head.iter().enumerate() {
        let z = layer.forward(&x);
        x = if li + 1 < w.head.len() { z.iter().map(|&v| leaky_relu(v)).collect() } else { z.clone() };
        head_pre.push(z);
    }
    Ok(PoseTrace {
        global,
        edge,
        head_in,
        head_pre,
        output: x,
    })
}

fn to_keypoints(input: &PoseInput, dim: usize, raw: &[f64]) -> Result<KeypointSet> {
    let mut coords = raw.to_vec();
    if dim == 3 {
        for j in coords.chunks_exact_mut(3) {
            for (v, c) in j.iter_mut().zip(input.centroid.iter()) {
                *v += c;
            }
        }
    }
    KeypointSet::new(dim, coords)
}

/// Predicts keypoints. For `dim = 3` the cloud centroid is added back so
/// the result is in the world frame.
pub fn forward_pose(input: &PoseInput, w: &PoseWeights, backbone: Backbone, dim: usize) -> Result<KeypointSet> {
    if w.backbone != backbone || w.dim != dim {
        return Err(Error::Shape(format!(
            "weights are {} with D={}, requested {} with D={}",
            w.backbone, w.dim, backbone, dim
        )));
    }
    let trace = forward_trace(input, w)?;
    to_keypoints(input, dim, &trace.output)
}

/// Gradients of a scalar with respect to the weights and the centered
/// input points.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGradient {
    pub weights: PoseWeights,
    pub points: Vec<Vector3<f64>>,
}

fn activate_grad(z: &[f64], g: &[f64]) -> Vec<f64> {
    z.iter().zip(g).map(|(&z, &g)| g * leaky_relu_grad(z)).collect()
}

/// Backpropagates `grad_out` (with respect to the raw output) through a
/// traced forward pass. Only the max-pool winners receive gradient.
pub fn backward_pose(input: &PoseInput, w: &PoseWeights, trace: &PoseTrace, grad_out: &[f64]) -> PoseGradient {
    let mut gw = w.zeros_like();
    let mut gp = vec![Vector3::zeros(); input.points.len()];

    let mut g = grad_out.to_vec();
    for li in (0..w.head.len()).rev() {
        let z = &trace.head_pre[li];
        if li + 1 < w.head.len() {
            g = activate_grad(z, &g);
        }
        let x: Vec<f64> = if li == 0 {
            trace.head_in.clone()
        } else {
            trace.head_pre[li - 1].iter().map(|&v| leaky_relu(v)).collect()
        };
        g = w.head[li].backward(&x, &g, &mut gw.head[li]);
    }

    let mut offset = 0;
    if let Some(best) = &trace.global {
        let width = best.pre.len();
        let gz = activate_grad(&best.pre, &g[offset..offset + width]);
        offset += width;
        for (p, chans) in best.by_source(&gz) {
            let x = input.points[p];
            let z1 = w.global[0].forward(x.as_slice());
            let h1: Vec<f64> = z1.iter().map(|&v| leaky_relu(v)).collect();
            let z2 = w.global[1].forward(&h1);
            let h2: Vec<f64> = z2.iter().map(|&v| leaky_relu(v)).collect();
            let g2 = activate_grad(&z2, &w.global[2].backward_sparse(&h2, &chans, &mut gw.global[2]));
            let g1 = activate_grad(&z1, &w.global[1].backward(&h1, &g2, &mut gw.global[1]));
            let gx = w.global[0].backward(x.as_slice(), &g1, &mut gw.global[0]);
            gp[p] += Vector3::new(gx[0], gx[1], gx[2]);
        }
    }
    if let Some(best) = &trace.edge {
        let width = best.pre.len();
        let gz = activate_grad(&best.pre, &g[offset..offset + width]);
        let nbrs = input.neighbors.as_ref().expect("edge branch was traced");
        for (e, chans) in best.by_source(&gz) {
            let (i, j) = (e / nbrs.k, nbrs.row(e / nbrs.k)[e % nbrs.k] as usize);
            let feat = edge_feature(&input.points, i, j);
            let z1 = w.edge[0].forward(&feat);
            let h1: Vec<f64> = z1.iter().map(|&v| leaky_relu(v)).collect();
            let g1 = activate_grad(&z1, &w.edge[1].backward_sparse(&h1, &chans, &mut gw.edge[1]));
            let ge = w.edge[0].backward(&feat, &g1, &mut gw.edge[0]);
            for r in 0..3 {
                gp[j][r] += ge[r];
                gp[i][r] += ge[r + 3] - ge[r];
            }
        }
    }
    PoseGradient { weights: gw, points: gp }
}

/// Mean squared keypoint loss, its gradient, and the prediction.
pub fn pose_loss_grad(input: &PoseInput, w: &PoseWeights, target: &KeypointSet) -> Result<(f64, PoseGradient, KeypointSet)> {
    let trace = forward_trace(input, w)?;
    let pred = to_keypoints(input, w.dim, &trace.output)?;
    let (loss, g_out) = loss_pose_grad(&pred, target)?;
    let grad = backward_pose(input, w, &trace, &g_out);
    Ok((loss, grad, pred))
}

/// Maps gradients on centered points back to the world-frame points they
/// were computed from, including the centroid re-added to 3D outputs.
pub fn world_point_grad(grad: &PoseGradient, grad_out: &[f64], dim: usize) -> Vec<Vector3<f64>> {
    let n = grad.points.len() as f64;
    let mean: Vector3<f64> = grad.points.iter().sum::<Vector3<f64>>() / n;
    let mut shift = Vector3::zeros();
    if dim == 3 {
        for j in 0..NUM_JOINTS {
            shift += Vector3::new(grad_out[3 * j], grad_out[3 * j + 1], grad_out[3 * j + 2]);
        }
        shift /= n;
    }
    grad.points.iter().map(|g| g - mean + shift).collect()
}

/// Hash of every discrete choice in the forward pass: the kNN graph, the
/// max-pool winners and the leaky-ReLU branch taken at each unit that
/// carries gradient. Equal fingerprints mean the network is smooth between
/// two inputs.
pub fn activation_fingerprint(input: &PoseInput, w: &PoseWeights) -> Result<u64> {
    let trace = forward_trace(input, w)?;
    let mut h = DefaultHasher::new();
    let signs = |v: &[f64], h: &mut DefaultHasher| v.iter().for_each(|&x| (x > 0.0).hash(h));
    if let Some(n) = &input.neighbors {
        n.indices.hash(&mut h);
    }
    for z in &trace.head_pre {
        signs(z, &mut h);
    }
    if let Some(best) = &trace.global {
        best.arg.hash(&mut h);
        signs(&best.pre, &mut h);
        for &p in &best.arg {
            let z1 = w.global[0].forward(input.points[p].as_slice());
            let h1: Vec<f64> = z1.iter().map(|&v| leaky_relu(v)).collect();
            signs(&z1, &mut h);
            signs(&w.global[1].forward(&h1), &mut h);
        }
    }
    if let Some(best) = &trace.edge {
        best.arg.hash(&mut h);
        signs(&best.pre, &mut h);
        let nbrs = input.neighbors.as_ref().unwrap();
        for &e in &best.arg {
            let (i, j) = (e / nbrs.k, nbrs.row(e / nbrs.k)[e % nbrs.k] as usize);
            signs(&w.edge[0].forward(&edge_feature(&input.points, i, j)), &mut h);
        }
    }
    Ok(h.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{finite_diff_check_with, FdOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Within one activation regime the loss is quadratic in any single
    // weight or coordinate, so central differences are exact and the widest
    // step that stays in the regime has the least rounding noise.
    const EPS: f64 = 1e-2;
    const SHRINK: u32 = 1;

    fn random_cloud(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..3.0)))
            .collect()
    }

    fn lrelu_vec(v: Vec<f64>) -> Vec<f64> {
        v.into_iter().map(|x| if x > 0.0 { x } else { 0.01 * x }).collect()
    }

    /// Straight-line transcription: explicit per-edge features, per-point
    /// neighbor max, then a global max.
    fn oracle(input: &PoseInput, w: &PoseWeights) -> Vec<f64> {
        fn affine(l: &Dense, x: &[f64]) -> Vec<f64> {
            (0..l.fan_out)
                .map(|o| l.bias[o] + (0..l.fan_in).map(|i| x[i] * l.weight[i * l.fan_out + o]).sum::<f64>())
                .collect()
        }
        let mut desc = Vec::new();
        if w.backbone.uses_global() {
            let mut m = vec![f64::NEG_INFINITY; 256];
            for p in &input.points {
                let h = lrelu_vec(affine(&w.global[0], p.as_slice()));
                let h = lrelu_vec(affine(&w.global[1], &h));
                let h = lrelu_vec(affine(&w.global[2], &h));
                m.iter_mut().zip(&h).for_each(|(a, b)| *a = a.max(*b));
            }
            desc.extend(m);
        }
        if w.backbone.uses_edges() {
            let nb = input.neighbors.as_ref().unwrap();
            let mut global = vec![f64::NEG_INFINITY; 128];
            for i in 0..input.points.len() {
                let mut local = vec![f64::NEG_INFINITY; 128];
                for &j in nb.row(i) {
                    let xi = input.points[i];
                    let d = input.points[j as usize] - xi;
                    let e = [d.x, d.y, d.z, xi.x, xi.y, xi.z];
                    let h = lrelu_vec(affine(&w.edge[0], &e));
                    let h = lrelu_vec(affine(&w.edge[1], &h));
                    local.iter_mut().zip(&h).for_each(|(a, b)| *a = a.max(*b));
                }
                global.iter_mut().zip(&local).for_each(|(a, b)| *a = a.max(*b));
            }
            desc.extend(global);
        }
        let h = lrelu_vec(affine(&w.head[0], &desc));
        let h = lrelu_vec(affine(&w.head[1], &h));
        affine(&w.head[2], &h)
    }

    #[test]
    fn zero_network_predicts_centroid() {
        let pts = random_cloud(40, 1);
        for b in Backbone::ALL {
            let input = PoseInput::from_world(&pts, b, 8).unwrap();
            let w = PoseWeights::zeros(b, 3).unwrap();
            let kp = forward_pose(&input, &w, b, 3).unwrap();
            for j in 0..NUM_JOINTS {
                assert!((kp.joint3(j) - input.centroid).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_straight_line_oracle() {
        let pts = random_cloud(64, 2);
        for (s, b) in Backbone::ALL.into_iter().enumerate() {
            let input = PoseInput::from_world(&pts, b, 16).unwrap();
            let w = PoseWeights::init(b, 3, s as u64).unwrap();
            let trace = forward_trace(&input, &w).unwrap();
            for (a, e) in trace.output.iter().zip(oracle(&input, &w)) {
                assert!((a - e).abs() < 1e-5, "{b}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn permutation_invariant() {
        let pts = random_cloud(50, 3);
        let mut perm = pts.clone();
        perm.reverse();
        perm.swap(3, 17);
        for b in Backbone::ALL {
            let w = PoseWeights::init(b, 3, 9).unwrap();
            let a = forward_pose(&PoseInput::from_world(&pts, b, 8).unwrap(), &w, b, 3).unwrap();
            let c = forward_pose(&PoseInput::from_world(&perm, b, 8).unwrap(), &w, b, 3).unwrap();
            for (x, y) in a.coords.iter().zip(&c.coords) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_request_is_an_error() {
        let input = PoseInput::from_world(&random_cloud(20, 4), Backbone::Hybrid, 4).unwrap();
        let w = PoseWeights::zeros(Backbone::Hybrid, 3).unwrap();
        assert!(forward_pose(&input, &w, Backbone::PointNet, 3).is_err());
        assert!(forward_pose(&input, &w, Backbone::Hybrid, 2).is_err());
    }

    #[test]
    fn weight_and_point_gradients_match_fd() {
        let pts = random_cloud(24, 5);
        let target = KeypointSet::new(3, (0..57).map(|i| (i as f64 * 0.37).sin() + 2.0).collect()).unwrap();
        for b in Backbone::ALL {
            let input = PoseInput::from_world(&pts, b, 4).unwrap();
            let w = PoseWeights::init(b, 3, 6).unwrap();
            let (_, grad, _) = pose_loss_grad(&input, &w, &target).unwrap();

            let mut probe = w.clone();
            let flat = w.to_flat();
            let analytic = grad.weights.to_flat();
            let stride = (flat.len() / 300).max(1);
            let idx: Vec<usize> = (0..flat.len()).step_by(stride).collect();
            let regime = |p: &[f64]| {
                let mut q = w.clone();
                q.set_flat(p).unwrap();
                activation_fingerprint(&input, &q).unwrap()
            };
            let opts = FdOptions {
                eps: EPS,
                indices: Some(&idx),
                regime: Some(&regime),
                shrink: SHRINK,
            };
            let r = finite_diff_check_with(
                |p| {
                    probe.set_flat(p).unwrap();
                    pose_loss_grad(&input, &probe, &target).unwrap().0
                },
                &flat,
                &analytic,
                &opts,
            );
            assert!(r.max_rel_error < 1e-4 && r.skipped <= r.checked, "{b} weights: {r:?}");

            let base: Vec<f64> = input.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
            let gpts: Vec<f64> = grad.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
            let with_points = |p: &[f64]| {
                let mut q = input.clone();
                for (v, c) in q.points.iter_mut().zip(p.chunks_exact(3)) {
                    *v = Vector3::new(c[0], c[1], c[2]);
                }
                q
            };
            let regime = |p: &[f64]| activation_fingerprint(&with_points(p), &w).unwrap();
            let opts = FdOptions {
                eps: EPS,
                indices: None,
                regime: Some(&regime),
                shrink: SHRINK,
            };
            let r = finite_diff_check_with(
                |p| pose_loss_grad(&with_points(p), &w, &target).unwrap().0,
                &base,
                &gpts,
                &opts,
            );
            assert!(r.max_rel_error < 1e-4 && r.skipped <= r.checked, "{b} points: {r:?}");
        }
    }

    #[test]
    fn world_gradient_accounts_for_centering() {
        let pts = random_cloud(30, 8);
        let b = Backbone::Hybrid;
        let w = PoseWeights::init(b, 3, 2).unwrap();
        let target = KeypointSet::zeros(3);
        let input = PoseInput::from_world(&pts, b, 4).unwrap();
        let trace = forward_trace(&input, &w).unwrap();
        let pred = to_keypoints(&input, 3, &trace.output).unwrap();
        let (_, g_out) = loss_pose_grad(&pred, &target).unwrap();
        let grad = backward_pose(&input, &w, &trace, &g_out);
        let analytic: Vec<f64> = world_point_grad(&grad, &g_out, 3).iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let base: Vec<f64> = pts.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let build = |p: &[f64]| {
            let v: Vec<_> = p.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
            PoseInput::from_world(&v, b, 4).unwrap()
        };
        let regime = |p: &[f64]| activation_fingerprint(&build(p), &w).unwrap();
        let opts = FdOptions {
            eps: EPS,
            indices: None,
            regime: Some(&regime),
            shrink: SHRINK,
        };
        let r = finite_diff_check_with(
            |p| pose_loss_grad(&build(p), &w, &target).unwrap().0,
            &base,
            &analytic,
            &opts,
        );
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
