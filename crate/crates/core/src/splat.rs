//! Forward rasterizer: EWA projection of 3D Gaussians and front-to-back
//! alpha compositing of color, feature, depth and alpha.
//!
//! Two paths produce the same image. [`render`] bins projected Gaussians into
//! 16×16 tiles and composites tiles in parallel; [`render_naive`] walks the
//! full depth-sorted list at every pixel. Both visit candidates through the
//! same per-pixel loop, so on every pixel they perform the same arithmetic
//! and agree exactly.
//!
//! Per pixel, with contributors sorted front to back by camera-space depth
//! (ties by index):
//!
//! ```text
//! a_i = min(0.99, opacity_i * G_i(pixel))      skipped when a_i < 1/255
//! w_i = a_i * T_i,   T_0 = 1,  T_{i+1} = T_i (1 - a_i)
//! color   = Σ w_i c_i + T_final * background
//! feature = Σ w_i f_i
//! depth   = Σ w_i z_i / alpha      (0 when alpha <= 1e-6)
//! alpha   = 1 - T_final
//! ```
//!
//! The walk stops after the contribution that drops `T` below 1e-4.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::Result;
use crate::gaussian::{covariance3d, ActivatedSet, Gaussian, GaussianSet};
use crate::image::Image;

/// Screen-space dilation added to every 2D covariance, in px².
pub const LOW_PASS: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
pub const TILE_SIZE: usize = 16;
/// Below this accumulated alpha a pixel reports depth 0.
pub const DEPTH_ALPHA_EPS: f64 = 1e-6;

/// A Gaussian after projection into an image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    /// 2D covariance including the low-pass dilation.
    pub cov2d: Matrix2<f64>,
    /// Upper triangle (a, b, c) of the inverse 2D covariance.
    pub conic: [f64; 3],
    pub view_depth: f64,
    pub index: usize,
    /// Three standard deviations along the major axis, in pixels.
    pub radius: f64,
}

/// Intermediate quantities of the EWA projection, reused by the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Projection {
    pub cam_point: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub cov3d: Matrix3<f64>,
    pub projected: ProjectedGaussian,
}

/// Perspective Jacobian of `(fx x/z + cx, fy y/z + cy)` at a camera point.
pub(crate) fn projection_jacobian(cam: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz * iz,
    )
}

pub(crate) fn project_parts(
    position: &Vector3<f64>,
    rotation: [f64; 4],
    scale: &Vector3<f64>,
    cam: &Camera,
    index: usize,
) -> Option<Projection> {
    let t = cam.to_camera(position);
    if t.z <= cam.near {
        return None;
    }
    let mean2d = Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy);
    let j = projection_jacobian(cam, &t);
    let cov3d = covariance3d(rotation, scale);
    let m = j * cam.rotation;
    let mut cov2d = m * cov3d * m.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += LOW_PASS;
    cov2d[(1, 1)] += LOW_PASS;

    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(0, 1)];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, cov2d[(0, 0)] / det];
    let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = 3.0 * lambda_max.sqrt();
    let (w, h) = (cam.width as f64, cam.height as f64);
    if mean2d.x < -radius
        || mean2d.y < -radius
        || mean2d.x > w - 1.0 + radius
        || mean2d.y > h - 1.0 + radius
    {
        return None;
    }
    Some(Projection {
        cam_point: t,
        jacobian: j,
        cov3d,
        projected: ProjectedGaussian {
            mean2d,
            cov2d,
            conic,
            view_depth: t.z,
            index,
            radius,
        },
    })
}

/// Projects an activated Gaussian; `None` means culled (behind the near plane
/// or more than 3σ outside the image).
pub fn project(g: &Gaussian, cam: &Camera, index: usize) -> Option<ProjectedGaussian> {
    project_parts(&g.position, g.rotation, &g.scale, cam, index).map(|p| p.projected)
}

/// Unnormalized 2D Gaussian density `exp(-½ dᵀ Σ'⁻¹ d)`, `d = pixel − mean2d`.
pub fn eval2d(pg: &ProjectedGaussian, pixel: Vector2<f64>) -> f64 {
    let d = pixel - pg.mean2d;
    let [a, b, c] = pg.conic;
    (-0.5 * (a * d.x * d.x + c * d.y * d.y) - b * d.x * d.y).exp()
}

/// Hot-loop view of a projected Gaussian.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Splat {
    pub mx: f64,
    pub my: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub opacity: f64,
    /// `ln(1 / (255 * opacity))`: exponents below this can never reach
    /// [`ALPHA_MIN`].
    pub log_cut: f64,
}

impl Splat {
    #[inline(always)]
    pub fn alpha_at(&self, px: f64, py: f64) -> Option<f64> {
        let dx = px - self.mx;
        let dy = py - self.my;
        let power = -0.5 * (self.a * dx * dx + self.c * dy * dy) - self.b * dx * dy;
        if power < self.log_cut {
            return None;
        }
        let alpha = (self.opacity * power.exp()).min(ALPHA_MAX);
        if alpha < ALPHA_MIN {
            None
        } else {
            Some(alpha)
        }
    }
}

/// Projected, depth-sorted and tile-binned scene for one camera.
pub(crate) struct Prepared {
    pub width: usize,
    pub height: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub feature_dim: usize,
    /// Sorted front to back by (view depth, index).
    pub projections: Vec<Projection>,
    pub splats: Vec<Splat>,
    pub colors: Vec<[f64; 3]>,
    /// `len × feature_dim`, in sorted order.
    pub features: Vec<f64>,
    /// Slot ranges into `tile_slots`, one per tile plus a sentinel.
    pub tile_offsets: Vec<usize>,
    pub tile_slots: Vec<u32>,
    /// Inclusive pixel bounds `[x0, x1, y0, y1]` outside which a slot never
    /// reaches [`ALPHA_MIN`].
    pub pixel_rects: Vec<[usize; 4]>,
}

impl Prepared {
    pub fn new(set: &ActivatedSet, cam: &Camera) -> Self {
        let mut projections: Vec<Projection> = (0..set.len())
            .into_par_iter()
            .filter_map(|i| {
                if set.opacities[i] * 255.0 < 1.0 {
                    // Can never reach ALPHA_MIN anywhere.
                    return None;
                }
                project_parts(&set.positions[i], set.rotations[i], &set.scales[i], cam, i)
            })
            .collect();
        projections.sort_by(|p, q| {
            p.projected
                .view_depth
                .total_cmp(&q.projected.view_depth)
                .then(p.projected.index.cmp(&q.projected.index))
        });

        let f = set.feature_dim;
        let splats: Vec<Splat> = projections
            .iter()
            .map(|p| {
                let pg = &p.projected;
                let o = set.opacities[pg.index];
                Splat {
                    mx: pg.mean2d.x,
                    my: pg.mean2d.y,
                    a: pg.conic[0],
                    b: pg.conic[1],
                    c: pg.conic[2],
                    opacity: o,
                    log_cut: -(255.0 * o).ln(),
                }
            })
            .collect();
        let colors = projections
            .iter()
            .map(|p| {
                let c = set.colors[p.projected.index];
                [c.x, c.y, c.z]
            })
            .collect();
        let mut features = Vec::with_capacity(projections.len() * f);
        for p in &projections {
            features.extend_from_slice(set.feature(p.projected.index));
        }

        let tiles_x = cam.width.div_ceil(TILE_SIZE);
        let tiles_y = cam.height.div_ceil(TILE_SIZE);
        let pixel_rects: Vec<[usize; 4]> = projections
            .iter()
            .zip(&splats)
            .map(|(p, s)| pixel_rect(&p.projected, s.opacity, cam.width, cam.height).unwrap_or([1, 0, 1, 0]))
            .collect();
        let rects: Vec<Option<[usize; 4]>> = pixel_rects
            .iter()
            .map(|r| (r[0] <= r[1] && r[2] <= r[3]).then(|| r.map(|v| v / TILE_SIZE)))
            .collect();
        let mut counts = vec![0usize; tiles_x * tiles_y];
        for r in rects.iter().flatten() {
            for ty in r[2]..=r[3] {
                for tx in r[0]..=r[1] {
                    counts[ty * tiles_x + tx] += 1;
                }
            }
        }
        let mut tile_offsets = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0;
        tile_offsets.push(0);
        for c in &counts {
            acc += c;
            tile_offsets.push(acc);
        }
        let mut cursor = tile_offsets[..counts.len()].to_vec();
        let mut tile_slots = vec![0u32; acc];
        for (slot, r) in rects.iter().enumerate() {
            if let Some(r) = r {
                for ty in r[2]..=r[3] {
                    for tx in r[0]..=r[1] {
                        let t = ty * tiles_x + tx;
                        tile_slots[cursor[t]] = slot as u32;
                        cursor[t] += 1;
                    }
                }
            }
        }

        Self {
            width: cam.width,
            height: cam.height,
            tiles_x,
            tiles_y,
            feature_dim: f,
            projections,
            splats,
            colors,
            features,
            tile_offsets,
            tile_slots,
            pixel_rects,
        }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    pub fn slots_of_tile(&self, tile: usize) -> &[u32] {
        &self.tile_slots[self.tile_offsets[tile]..self.tile_offsets[tile + 1]]
    }

    /// Pixel bounds `(x0, x1, y0, y1)` (exclusive ends) of a tile.
    pub fn tile_bounds(&self, tile: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (
            x0,
            (x0 + TILE_SIZE).min(self.width),
            y0,
            (y0 + TILE_SIZE).min(self.height),
        )
    }
}

/// Inclusive pixel range `[x0, x1, y0, y1]` covering every pixel where the
/// Gaussian can reach [`ALPHA_MIN`]. Empty ranges have `x0 > x1` or `y0 > y1`.
fn pixel_rect(pg: &ProjectedGaussian, opacity: f64, width: usize, height: usize) -> Option<[usize; 4]> {
    let reach = 2.0 * (255.0 * opacity).ln();
    if !(reach > 0.0) {
        return None;
    }
    // Axis-aligned extent of the ellipse dᵀ Σ'⁻¹ d = reach, plus slack for
    // rounding in the per-pixel test.
    let ex = (reach * pg.cov2d[(0, 0)]).sqrt() + 0.5;
    let ey = (reach * pg.cov2d[(1, 1)]).sqrt() + 0.5;
    let (x0, x1) = (pg.mean2d.x - ex, pg.mean2d.x + ex);
    let (y0, y1) = (pg.mean2d.y - ey, pg.mean2d.y + ey);
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    if x1 < 0.0 || y1 < 0.0 || x0 > w || y0 > h {
        return None;
    }
    let lo = |v: f64, max: f64| v.clamp(0.0, max).ceil() as usize;
    let hi = |v: f64, max: f64| v.clamp(0.0, max).floor() as usize;
    Some([lo(x0, w), hi(x1, w), lo(y0, h), hi(y1, h)])
}

/// Front-to-back walk over candidate slots at one pixel.
///
/// `visit(slot, alpha, transmittance_before)` is called for every
/// contribution; returns the final transmittance.
#[inline(always)]
pub(crate) fn walk_pixel<F: FnMut(usize, f64, f64)>(
    splats: &[Splat],
    slots: impl Iterator<Item = usize>,
    px: f64,
    py: f64,
    mut visit: F,
) -> f64 {
    let mut t = 1.0;
    for s in slots {
        let Some(alpha) = splats[s].alpha_at(px, py) else {
            continue;
        };
        visit(s, alpha, t);
        t *= 1.0 - alpha;
        if t < TRANSMITTANCE_MIN {
            break;
        }
    }
    t
}

/// Rendered images of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: Image,
    pub feature: Image,
    pub depth: Image,
    pub alpha: Image,
}

impl RenderOutput {
    fn blank(width: usize, height: usize, feature_dim: usize, background: [f64; 3]) -> Self {
        let mut color = Image::new(width, height, 3);
        for px in color.data.chunks_exact_mut(3) {
            px.copy_from_slice(&background);
        }
        Self {
            color,
            feature: Image::new(width, height, feature_dim),
            depth: Image::new(width, height, 1),
            alpha: Image::new(width, height, 1),
        }
    }
}

/// Composites one pixel from the candidate slots into the output slices.
#[inline(always)]
fn shade_pixel(
    prep: &Prepared,
    slots: impl Iterator<Item = usize>,
    px: f64,
    py: f64,
    background: [f64; 3],
    color: &mut [f64],
    feature: &mut [f64],
) -> (f64, f64) {
    let f = prep.feature_dim;
    let mut rgb = [0.0; 3];
    let mut depth_num = 0.0;
    feature.fill(0.0);
    let t = walk_pixel(&prep.splats, slots, px, py, |s, alpha, t| {
        let w = alpha * t;
        let c = &prep.colors[s];
        rgb[0] += w * c[0];
        rgb[1] += w * c[1];
        rgb[2] += w * c[2];
        for (acc, &v) in feature.iter_mut().zip(&prep.features[s * f..(s + 1) * f]) {
            *acc += w * v;
        }
        depth_num += w * prep.projections[s].projected.view_depth;
    });
    for k in 0..3 {
        color[k] = rgb[k] + t * background[k];
    }
    let alpha = 1.0 - t;
    let depth = if alpha > DEPTH_ALPHA_EPS {
        depth_num / alpha
    } else {
        0.0
    };
    (depth, alpha)
}

/// Tiled, tile-parallel renderer.
pub fn render(set: &GaussianSet, cam: &Camera, background: [f64; 3]) -> Result<RenderOutput> {
    cam.validate()?;
    Ok(render_activated(&set.activate()?, cam, background))
}

pub fn render_activated(set: &ActivatedSet, cam: &Camera, background: [f64; 3]) -> RenderOutput {
    let prep = Prepared::new(set, cam);
    render_prepared(&prep, background)
}

struct TileResult {
    color: Vec<f64>,
    feature: Vec<f64>,
    depth: Vec<f64>,
    alpha: Vec<f64>,
}

pub(crate) fn render_prepared(prep: &Prepared, background: [f64; 3]) -> RenderOutput {
    let f = prep.feature_dim;
    let mut out = RenderOutput::blank(prep.width, prep.height, f, background);
    let tiles: Vec<TileResult> = (0..prep.tile_count())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = prep.tile_bounds(tile);
            let tw = x1 - x0;
            let n = tw * (y1 - y0);
            let mut res = TileResult {
                color: vec![0.0; n * 3],
                feature: vec![0.0; n * f],
                depth: vec![0.0; n],
                alpha: vec![0.0; n],
            };
            let mut trans = vec![1.0; n];
            let mut depth_num = vec![0.0; n];
            let mut live = n;
            // Splat-major inside the tile: each pixel still sees its
            // contributions front to back, so the sums match a per-pixel walk.
            for &slot in prep.slots_of_tile(tile) {
                let s = slot as usize;
                let r = prep.pixel_rects[s];
                let (ax, bx) = (r[0].max(x0), r[1].min(x1 - 1));
                let (ay, by) = (r[2].max(y0), r[3].min(y1 - 1));
                if ax > bx || ay > by {
                    continue;
                }
                let splat = &prep.splats[s];
                let c = &prep.colors[s];
                let feat = &prep.features[s * f..(s + 1) * f];
                let z = prep.projections[s].projected.view_depth;
                for y in ay..=by {
                    for x in ax..=bx {
                        let k = (y - y0) * tw + (x - x0);
                        let t = trans[k];
                        if t < TRANSMITTANCE_MIN {
                            continue;
                        }
                        let Some(alpha) = splat.alpha_at(x as f64, y as f64) else {
                            continue;
                        };
                        let w = alpha * t;
                        let rgb = &mut res.color[k * 3..k * 3 + 3];
                        rgb[0] += w * c[0];
                        rgb[1] += w * c[1];
                        rgb[2] += w * c[2];
                        for (acc, &v) in res.feature[k * f..(k + 1) * f].iter_mut().zip(feat) {
                            *acc += w * v;
                        }
                        depth_num[k] += w * z;
                        let t = t * (1.0 - alpha);
                        trans[k] = t;
                        if t < TRANSMITTANCE_MIN {
                            live -= 1;
                        }
                    }
                }
                if live == 0 {
                    break;
                }
            }
            for k in 0..n {
                let t = trans[k];
                for (ch, &bg) in res.color[k * 3..k * 3 + 3].iter_mut().zip(&background) {
                    *ch += t * bg;
                }
                let alpha = 1.0 - t;
                res.alpha[k] = alpha;
                res.depth[k] = if alpha > DEPTH_ALPHA_EPS {
                    depth_num[k] / alpha
                } else {
                    0.0
                };
            }
            res
        })
        .collect();

    for (tile, res) in tiles.iter().enumerate() {
        let (x0, x1, y0, y1) = prep.tile_bounds(tile);
        let tw = x1 - x0;
        for y in y0..y1 {
            let row = (y - y0) * tw;
            let o = y * prep.width + x0;
            out.color.data[o * 3..(o + tw) * 3].copy_from_slice(&res.color[row * 3..(row + tw) * 3]);
            out.feature.data[o * f..(o + tw) * f]
                .copy_from_slice(&res.feature[row * f..(row + tw) * f]);
            out.depth.data[o..o + tw].copy_from_slice(&res.depth[row..row + tw]);
            out.alpha.data[o..o + tw].copy_from_slice(&res.alpha[row..row + tw]);
        }
    }
    out
}

/// Reference renderer: every pixel walks the globally sorted list of all
/// projected Gaussians. Single-threaded.
pub fn render_naive(set: &GaussianSet, cam: &Camera, background: [f64; 3]) -> Result<RenderOutput> {
    cam.validate()?;
    let act = set.activate()?;
    let prep = Prepared::new(&act, cam);
    let f = prep.feature_dim;
    let mut out = RenderOutput::blank(cam.width, cam.height, f, background);
    let all = prep.splats.len();
    for y in 0..cam.height {
        for x in 0..cam.width {
            let o = y * cam.width + x;
            let (d, a) = shade_pixel(
                &prep,
                0..all,
                x as f64,
                y as f64,
                background,
                &mut out.color.data[o * 3..o * 3 + 3],
                &mut out.feature.data[o * f..(o + 1) * f],
            );
            out.depth.data[o] = d;
            out.alpha.data[o] = a;
        }
    }
    Ok(out)
}

/// One term of a pixel's compositing sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub index: usize,
    pub alpha: f64,
    pub transmittance: f64,
    /// `alpha * transmittance`.
    pub weight: f64,
}

/// The compositing terms at pixel `(x, y)`, front to back.
pub fn pixel_contributions(
    set: &GaussianSet,
    cam: &Camera,
    x: usize,
    y: usize,
) -> Result<Vec<Contribution>> {
    let act = set.activate()?;
    let prep = Prepared::new(&act, cam);
    let mut out = Vec::new();
    walk_pixel(&prep.splats, 0..prep.splats.len(), x as f64, y as f64, |s, alpha, t| {
        out.push(Contribution {
            index: prep.projections[s].projected.index,
            alpha,
            transmittance: t,
            weight: alpha * t,
        })
    });
    Ok(out)
}

/// Hash of which Gaussians contribute at which pixels (and where each walk
/// terminated).
///
/// Rendering is smooth in the parameters only while this stays constant; the
/// gradient checks use it to recognise perturbations that cross a skip,
/// clamp, termination or culling boundary.
pub fn contributor_fingerprint(set: &GaussianSet, cam: &Camera) -> Result<u64> {
    let act = set.activate()?;
    let prep = Prepared::new(&act, cam);
    let mut hasher = DefaultHasher::new();
    for tile in 0..prep.tile_count() {
        let (x0, x1, y0, y1) = prep.tile_bounds(tile);
        let slots = prep.slots_of_tile(tile);
        for y in y0..y1 {
            for x in x0..x1 {
                walk_pixel(&prep.splats, slots.iter().map(|&s| s as usize), x as f64, y as f64, |s, alpha, _| {
                    prep.projections[s].projected.index.hash(&mut hasher);
                    (alpha >= ALPHA_MAX).hash(&mut hasher);
                });
                u64::MAX.hash(&mut hasher);
            }
        }
    }
    Ok(hasher.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_gaussian(position: Vector3<f64>, scale: f64, opacity: f64, color: [f64; 3]) -> Gaussian {
        Gaussian {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: Vector3::repeat(scale),
            opacity,
            color: Vector3::from(color),
            feature: vec![0.3],
        }
    }

    #[test]
    fn on_axis_point_projects_to_principal_point() {
        let cam = Camera::identity(50.0, 60.0, 16.0, 12.0, 32, 24);
        let g = unit_gaussian(Vector3::new(0.0, 0.0, 4.0), 0.1, 0.5, [0.5; 3]);
        let pg = project(&g, &cam, 0).unwrap();
        assert_eq!(pg.mean2d, Vector2::new(16.0, 12.0));
        assert_eq!(pg.view_depth, 4.0);
    }

    #[test]
    fn isotropic_cov2d_closed_form() {
        let (fx, fy, s, d) = (50.0, 70.0, 0.2, 4.0);
        let cam = Camera::identity(fx, fy, 16.0, 16.0, 32, 32);
        let g = unit_gaussian(Vector3::new(0.0, 0.0, d), s, 0.5, [0.5; 3]);
        let pg = project(&g, &cam, 0).unwrap();
        let ex = (fx * s / d).powi(2) + LOW_PASS;
        let ey = (fy * s / d).powi(2) + LOW_PASS;
        assert!((pg.cov2d[(0, 0)] - ex).abs() < 1e-12);
        assert!((pg.cov2d[(1, 1)] - ey).abs() < 1e-12);
        assert!(pg.cov2d[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = Camera::identity(50.0, 50.0, 16.0, 16.0, 32, 32);
        let g = unit_gaussian(Vector3::new(0.0, 0.0, -1.0), 0.1, 0.5, [0.5; 3]);
        assert!(project(&g, &cam, 0).is_none());
        let far_off = unit_gaussian(Vector3::new(100.0, 0.0, 1.0), 0.01, 0.5, [0.5; 3]);
        assert!(project(&far_off, &cam, 0).is_none());
    }

    #[test]
    fn eval2d_examples() {
        let pg = ProjectedGaussian {
            mean2d: Vector2::new(3.0, 4.0),
            cov2d: Matrix2::identity(),
            conic: [1.0, 0.0, 1.0],
            view_depth: 1.0,
            index: 0,
            radius: 3.0,
        };
        assert_eq!(eval2d(&pg, Vector2::new(3.0, 4.0)), 1.0);
        let v = eval2d(&pg, Vector2::new(3.0 + 2f64.sqrt(), 4.0));
        assert!((v - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn eval2d_matches_explicit_inverse() {
        let cov = Matrix2::new(3.0, 1.2, 1.2, 2.0);
        let inv = cov.try_inverse().unwrap();
        let det = cov.determinant();
        let pg = ProjectedGaussian {
            mean2d: Vector2::new(1.0, -2.0),
            cov2d: cov,
            conic: [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det],
            view_depth: 1.0,
            index: 0,
            radius: 0.0,
        };
        let px = Vector2::new(2.5, -0.5);
        let d = px - pg.mean2d;
        let expected = (-0.5 * (d.transpose() * inv * d)[(0, 0)]).exp();
        assert!((eval2d(&pg, px) - expected).abs() < 1e-14);
    }

    #[test]
    fn clamped_single_gaussian_pixel() {
        let cam = Camera::identity(40.0, 40.0, 8.0, 8.0, 16, 16);
        let g = unit_gaussian(Vector3::new(0.0, 0.0, 2.0), 0.1, 0.999, [0.2, 0.4, 0.8]);
        let set = GaussianSet::from_gaussians(&[g], 1).unwrap();
        let bg = [1.0, 0.5, 0.0];
        let out = render(&set, &cam, bg).unwrap();
        let px = out.color.pixel(8, 8);
        let expected = [0.99 * 0.2 + 0.01, 0.99 * 0.4 + 0.005, 0.99 * 0.8];
        for k in 0..3 {
            assert!((px[k] - expected[k]).abs() < 1e-12, "{px:?}");
        }
        assert!((out.alpha.get(8, 8, 0) - 0.99).abs() < 1e-12);
        assert!((out.depth.get(8, 8, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_set_renders_background() {
        let cam = Camera::identity(40.0, 40.0, 8.0, 8.0, 16, 16);
        let out = render(&GaussianSet::empty(2), &cam, [0.1, 0.2, 0.3]).unwrap();
        assert!(out.alpha.data.iter().all(|&a| a == 0.0));
        assert!(out.color.data.chunks(3).all(|c| c == [0.1, 0.2, 0.3]));
        assert!(out.feature.data.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn off_pixel_front_gaussian_leaves_back_result() {
        let cam = Camera::identity(40.0, 40.0, 8.0, 8.0, 16, 16);
        let back = unit_gaussian(Vector3::new(0.0, 0.0, 3.0), 0.1, 0.6, [0.9, 0.1, 0.1]);
        // Nearer, but centred on the far left of the image with a tiny
        // footprint, so it contributes nothing at the centre pixel.
        let front = unit_gaussian(Vector3::new(-0.35, 0.0, 2.0), 0.01, 0.9, [0.0, 1.0, 0.0]);
        let alone = render(&GaussianSet::from_gaussians(std::slice::from_ref(&back), 1).unwrap(), &cam, [0.0; 3]).unwrap();
        let both = render(&GaussianSet::from_gaussians(&[front, back], 1).unwrap(), &cam, [0.0; 3]).unwrap();
        assert_eq!(alone.color.pixel(8, 8), both.color.pixel(8, 8));
    }
}
