//! Reverse-mode pass through compositing, the 2D Gaussian, EWA projection,
//! covariance construction and the parameter activations.
//!
//! The forward walk is replayed per pixel to recover each contribution's
//! alpha and transmittance, then swept back to front:
//!
//! ```text
//! q_i      = ⟨gC, c_i⟩ + ⟨gF, f_i⟩ + gZ z_i
//! ∂L/∂a_i  = T_i (q_i − gT_{i+1})
//! gT_i     = a_i q_i + (1 − a_i) gT_{i+1}
//! ```
//!
//! where `gT_N` collects the adjoints that reach the final transmittance
//! (background color and accumulated alpha). Clamped alphas (`a_i = 0.99`)
//! and skipped contributions pass no gradient to opacity or geometry.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{rotation_matrix, GaussianSet};
use crate::splat::{walk_pixel, Prepared, RenderOutput, ALPHA_MAX, DEPTH_ALPHA_EPS};

/// Gradients of a scalar loss with respect to every raw Gaussian parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub scene: GaussianSet,
}

impl GradientBundle {
    pub fn is_finite(&self) -> bool {
        self.scene.to_flat().iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.scene.to_flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `⟨adjoint, output⟩` summed over all four images.
pub fn adjoint_inner(output: &RenderOutput, adjoint: &RenderOutput) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    dot(&output.color.data, &adjoint.color.data)
        + dot(&output.feature.data, &adjoint.feature.data)
        + dot(&output.depth.data, &adjoint.depth.data)
        + dot(&output.alpha.data, &adjoint.alpha.data)
}

/// Per-slot screen-space gradients accumulated over pixels.
#[derive(Clone)]
struct ScreenGrad {
    mean2d: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    depth: f64,
    touched: bool,
}

impl ScreenGrad {
    const ZERO: ScreenGrad = ScreenGrad {
        mean2d: [0.0; 2],
        conic: [0.0; 3],
        opacity: 0.0,
        color: [0.0; 3],
        depth: 0.0,
        touched: false,
    };

    fn add(&mut self, o: &ScreenGrad) {
        self.mean2d[0] += o.mean2d[0];
        self.mean2d[1] += o.mean2d[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
        self.touched |= o.touched;
    }
}

/// Gradient of `L = ⟨adjoint, render(set, cam, background)⟩` with respect to
/// the raw parameters of `set`.
pub fn backward_render(
    set: &GaussianSet,
    cam: &Camera,
    background: [f64; 3],
    adjoint: &RenderOutput,
) -> Result<GradientBundle> {
    cam.validate()?;
    let act = set.activate()?;
    let f = set.feature_dim();
    let (w, h) = (cam.width, cam.height);
    for (img, ch, what) in [
        (&adjoint.color, 3, "color adjoint"),
        (&adjoint.feature, f, "feature adjoint"),
        (&adjoint.depth, 1, "depth adjoint"),
        (&adjoint.alpha, 1, "alpha adjoint"),
    ] {
        if img.width != w || img.height != h || img.channels != ch {
            return Err(Error::Shape(format!(
                "{what} is {}x{}x{}, expected {w}x{h}x{ch}",
                img.width, img.height, img.channels
            )));
        }
        if img.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("render adjoint"));
        }
    }

    let prep = Prepared::new(&act, cam);
    let slots = prep.splats.len();

    // Tile-local accumulation, reduced below in tile order so the result
    // does not depend on scheduling.
    let partials: Vec<(Vec<ScreenGrad>, Vec<f64>)> = (0..prep.tile_count())
        .into_par_iter()
        .map(|tile| backward_tile(&prep, tile, background, adjoint))
        .collect();

    let mut screen = vec![ScreenGrad::ZERO; slots];
    let mut feature_grad = vec![0.0; slots * f];
    for (tile, (grads, fgrads)) in partials.iter().enumerate() {
        for (k, &slot) in prep.slots_of_tile(tile).iter().enumerate() {
            let slot = slot as usize;
            if !grads[k].touched {
                continue;
            }
            screen[slot].add(&grads[k]);
            for (dst, src) in feature_grad[slot * f..(slot + 1) * f]
                .iter_mut()
                .zip(&fgrads[k * f..(k + 1) * f])
            {
                *dst += src;
            }
        }
    }

    let per_slot: Vec<Option<SlotGrad>> = (0..slots)
        .into_par_iter()
        .map(|s| {
            if !screen[s].touched {
                return None;
            }
            let proj = &prep.projections[s];
            let i = proj.projected.index;
            Some(geometry_backward(
                cam,
                proj.cam_point,
                &proj.jacobian,
                &proj.cov3d,
                &proj.projected.cov2d,
                act.rotations[i],
                &act.scales[i],
                &screen[s],
            ))
        })
        .collect();

    let mut grad = GaussianSet::zeros(set.len(), f);
    for (s, g) in per_slot.iter().enumerate() {
        let Some(g) = g else { continue };
        let i = prep.projections[s].projected.index;
        let sc = &screen[s];

        grad.positions[i * 3..i * 3 + 3].copy_from_slice(g.position.as_slice());

        // Normalization q̂ = q/‖q‖.
        let q = &set.rotations[i * 4..i * 4 + 4];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let qh = act.rotations[i];
        let dot: f64 = (0..4).map(|k| qh[k] * g.rotation[k]).sum();
        for k in 0..4 {
            grad.rotations[i * 4 + k] = (g.rotation[k] - qh[k] * dot) / norm;
        }
        for k in 0..3 {
            grad.scales[i * 3 + k] = g.scale[k] * act.scales[i][k];
            let c = act.colors[i][k];
            grad.colors[i * 3 + k] = sc.color[k] * c * (1.0 - c);
        }
        let o = act.opacities[i];
        grad.opacities[i] = sc.opacity * o * (1.0 - o);
        for k in 0..f {
            let v = act.features[i * f + k];
            grad.features[i * f + k] = feature_grad[s * f + k] * v * (1.0 - v);
        }
    }
    Ok(GradientBundle { scene: grad })
}

fn backward_tile(
    prep: &Prepared,
    tile: usize,
    background: [f64; 3],
    adjoint: &RenderOutput,
) -> (Vec<ScreenGrad>, Vec<f64>) {
    let f = prep.feature_dim;
    let slots = prep.slots_of_tile(tile);
    let mut grads = vec![ScreenGrad::ZERO; slots.len()];
    let mut fgrads = vec![0.0; slots.len() * f];
    // Position within this tile's list, per global slot.
    let local_of = |slot: usize| -> usize {
        slots
            .binary_search(&(slot as u32))
            .expect("contributing slot must be binned in its tile")
    };
    let (x0, x1, y0, y1) = prep.tile_bounds(tile);
    let mut trace: Vec<(usize, f64, f64)> = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let o = y * prep.width + x;
            let g_color = &adjoint.color.data[o * 3..o * 3 + 3];
            let g_feat = &adjoint.feature.data[o * f..(o + 1) * f];
            let g_depth = adjoint.depth.data[o];
            let g_alpha = adjoint.alpha.data[o];
            if g_color.iter().all(|&v| v == 0.0)
                && g_feat.iter().all(|&v| v == 0.0)
                && g_depth == 0.0
                && g_alpha == 0.0
            {
                continue;
            }
            let (px, py) = (x as f64, y as f64);
            trace.clear();
            let t_final = walk_pixel(&prep.splats, slots.iter().map(|&s| s as usize), px, py, |s, a, t| {
                trace.push((s, a, t))
            });
            if trace.is_empty() {
                continue;
            }
            let alpha_px = 1.0 - t_final;
            let depth_num: f64 = trace
                .iter()
                .map(|&(s, a, t)| a * t * prep.projections[s].projected.view_depth)
                .sum();
            let (g_dnum, g_alpha_total) = if alpha_px > DEPTH_ALPHA_EPS {
                (
                    g_depth / alpha_px,
                    g_alpha - g_depth * depth_num / (alpha_px * alpha_px),
                )
            } else {
                (0.0, g_alpha)
            };
            let mut g_t = g_color[0] * background[0]
                + g_color[1] * background[1]
                + g_color[2] * background[2]
                - g_alpha_total;

            for &(s, a, t) in trace.iter().rev() {
                let c = &prep.colors[s];
                let feat = &prep.features[s * f..(s + 1) * f];
                let z = prep.projections[s].projected.view_depth;
                let mut q = g_color[0] * c[0] + g_color[1] * c[1] + g_color[2] * c[2] + g_dnum * z;
                for k in 0..f {
                    q += g_feat[k] * feat[k];
                }
                let d_alpha = t * (q - g_t);
                g_t = a * q + (1.0 - a) * g_t;

                let wgt = a * t;
                let l = local_of(s);
                let sg = &mut grads[l];
                sg.touched = true;
                for k in 0..3 {
                    sg.color[k] += g_color[k] * wgt;
                }
                sg.depth += g_dnum * wgt;
                for (dst, &gf) in fgrads[l * f..(l + 1) * f].iter_mut().zip(g_feat) {
                    *dst += gf * wgt;
                }
                if a >= ALPHA_MAX {
                    continue;
                }
                let sp = &prep.splats[s];
                let dx = px - sp.mx;
                let dy = py - sp.my;
                let gauss = a / sp.opacity;
                sg.opacity += d_alpha * gauss;
                // d/d(power) of opacity * exp(power)
                let g_power = d_alpha * a;
                sg.conic[0] += g_power * (-0.5 * dx * dx);
                sg.conic[1] += g_power * (-dx * dy);
                sg.conic[2] += g_power * (-0.5 * dy * dy);
                sg.mean2d[0] += g_power * (sp.a * dx + sp.b * dy);
                sg.mean2d[1] += g_power * (sp.b * dx + sp.c * dy);
            }
        }
    }
    (grads, fgrads)
}

struct SlotGrad {
    position: Vector3<f64>,
    /// With respect to the normalized quaternion.
    rotation: [f64; 4],
    /// With respect to the activated scale.
    scale: Vector3<f64>,
}

#[allow(clippy::too_many_arguments)]
fn geometry_backward(
    cam: &Camera,
    t: Vector3<f64>,
    jac: &Matrix2x3<f64>,
    cov3d: &Matrix3<f64>,
    cov2d: &Matrix2<f64>,
    rotation: [f64; 4],
    scale: &Vector3<f64>,
    sg: &ScreenGrad,
) -> SlotGrad {
    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;

    // Conic K = Σ'⁻¹: dL = tr(G_K dK), dK = −K dΣ' K.
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    let k = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
    let g_k = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2d = -(k * g_k * k);

    // Σ' = T Σ Tᵀ with T = J W.
    let tm = jac * cam.rotation;
    let g_cov3d = tm.transpose() * g_cov2d * tm;
    let g_t = 2.0 * g_cov2d * tm * cov3d;
    let g_j = g_t * cam.rotation.transpose();

    let mut d_cam = Vector3::zeros();
    d_cam.x += g_j[(0, 2)] * (-fx * iz2);
    d_cam.y += g_j[(1, 2)] * (-fy * iz2);
    d_cam.z += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(0, 2)] * (2.0 * fx * t.x * iz3)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(1, 2)] * (2.0 * fy * t.y * iz3);

    let g_mean = Vector2::new(sg.mean2d[0], sg.mean2d[1]);
    d_cam.x += g_mean.x * fx * iz;
    d_cam.y += g_mean.y * fy * iz;
    d_cam.z += -g_mean.x * fx * t.x * iz2 - g_mean.y * fy * t.y * iz2;
    d_cam.z += sg.depth;

    let position = cam.rotation.transpose() * d_cam;

    // Σ = M Mᵀ, M = R S.
    let r = rotation_matrix(rotation);
    let m = r * Matrix3::from_diagonal(scale);
    let g_m = 2.0 * g_cov3d * m;
    let mut g_r = g_m;
    let mut g_scale = Vector3::zeros();
    for j in 0..3 {
        for i in 0..3 {
            g_r[(i, j)] = g_m[(i, j)] * scale[j];
            g_scale[j] += g_m[(i, j)] * r[(i, j)];
        }
    }

    SlotGrad {
        position,
        rotation: rotation_matrix_backward(rotation, &g_r),
        scale: g_scale,
    }
}

/// Gradient with respect to (w, x, y, z) of `⟨G, R(q)⟩`, treating `q` as
/// unconstrained in the polynomial formula of [`rotation_matrix`].
pub(crate) fn rotation_matrix_backward(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let g = |i, j| g[(i, j)];
    let gw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let gx = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1))
        - 4.0 * x * (g(1, 1) + g(2, 2));
    let gy = 2.0 * (x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1))
        - 4.0 * y * (g(0, 0) + g(2, 2));
    let gz = 2.0 * (-w * g(0, 1) + x * g(0, 2) + w * g(1, 0) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1))
        - 4.0 * z * (g(0, 0) + g(1, 1));
    [gw, gx, gy, gz]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{sigmoid, Gaussian};
    use crate::grad::finite_diff_check;
    use crate::image::Image;
    use crate::splat::render;

    fn zero_adjoint(w: usize, h: usize, f: usize) -> RenderOutput {
        RenderOutput {
            color: Image::new(w, h, 3),
            feature: Image::new(w, h, f),
            depth: Image::new(w, h, 1),
            alpha: Image::new(w, h, 1),
        }
    }

    fn single() -> (GaussianSet, Camera) {
        let g = Gaussian {
            position: Vector3::new(0.02, -0.01, 2.0),
            rotation: [0.9, 0.1, -0.2, 0.3],
            scale: Vector3::new(0.1, 0.15, 0.08),
            opacity: 0.6,
            color: Vector3::new(0.3, 0.5, 0.7),
            feature: vec![0.4, 0.6],
        };
        let cam = Camera::identity(40.0, 40.0, 8.0, 8.0, 16, 16);
        (GaussianSet::from_gaussians(&[g], 2).unwrap(), cam)
    }

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let (set, cam) = single();
        let g = backward_render(&set, &cam, [0.0; 3], &zero_adjoint(16, 16, 2)).unwrap();
        assert!(g.scene.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn raw_color_gradient_single_term() {
        let (set, cam) = single();
        let mut adj = zero_adjoint(16, 16, 2);
        adj.color.pixel_mut(8, 8)[1] = 1.0;
        let g = backward_render(&set, &cam, [0.0; 3], &adj).unwrap();
        let contrib = crate::splat::pixel_contributions(&set, &cam, 8, 8).unwrap();
        assert_eq!(contrib.len(), 1);
        let c = sigmoid(set.colors[1]);
        let expected = c * (1.0 - c) * contrib[0].weight;
        assert!((g.scene.colors[1] - expected).abs() < 1e-15);
        assert_eq!(g.scene.colors[0], 0.0);
    }

    #[test]
    fn rotation_backward_matches_fd() {
        let q = [0.7, -0.3, 0.4, 0.2];
        let gm = Matrix3::new(0.3, -1.0, 0.2, 0.5, 0.1, -0.7, 0.9, 0.4, -0.2);
        let f = |p: &[f64]| rotation_matrix([p[0], p[1], p[2], p[3]]).component_mul(&gm).sum();
        let analytic = rotation_matrix_backward(q, &gm);
        let r = finite_diff_check(f, &q, &analytic, 1e-5);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn single_gaussian_all_classes_match_fd() {
        let (set, cam) = single();
        let mut adj = zero_adjoint(16, 16, 2);
        let mut k = 0.0f64;
        for v in adj.color.data.iter_mut().chain(adj.feature.data.iter_mut()) {
            k += 0.37;
            *v = k.sin();
        }
        for v in adj.depth.data.iter_mut().chain(adj.alpha.data.iter_mut()) {
            k += 0.21;
            *v = k.cos();
        }
        let bg = [0.2, 0.1, 0.4];
        let g = backward_render(&set, &cam, bg, &adj).unwrap();
        let mut probe = set.clone();
        let loss = |p: &[f64]| {
            probe.set_flat(p);
            adjoint_inner(&render(&probe, &cam, bg).unwrap(), &adj)
        };
        let r = finite_diff_check(loss, &set.to_flat(), &g.scene.to_flat(), 1e-5);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
