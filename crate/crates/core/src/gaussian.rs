//! Gaussian scene parameters, their activations, and 3D covariance.
//!
//! A [`GaussianSet`] stores every parameter in its unconstrained (raw) form,
//! one flat array per parameter class. [`GaussianSet::activate`] maps the raw
//! values onto their valid ranges:
//!
//! | class    | raw → activated          |
//! |----------|--------------------------|
//! | position | identity                 |
//! | rotation | q / ‖q‖ (w, x, y, z)     |
//! | scale    | exp                      |
//! | opacity  | sigmoid                  |
//! | color    | sigmoid                  |
//! | feature  | sigmoid                  |

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub const DEFAULT_FEATURE_DIM: usize = 8;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`], clamped away from the asymptotes.
#[inline]
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// One parameter array of a [`GaussianSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamClass {
    Position,
    Rotation,
    Scale,
    Opacity,
    Color,
    Feature,
}

impl ParamClass {
    pub const ALL: [ParamClass; 6] = [
        ParamClass::Position,
        ParamClass::Rotation,
        ParamClass::Scale,
        ParamClass::Opacity,
        ParamClass::Color,
        ParamClass::Feature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::Position => "position",
            ParamClass::Rotation => "rotation",
            ParamClass::Scale => "scale",
            ParamClass::Opacity => "opacity",
            ParamClass::Color => "color",
            ParamClass::Feature => "feature",
        }
    }

    /// Values per Gaussian for this class.
    pub fn width(self, feature_dim: usize) -> usize {
        match self {
            ParamClass::Position | ParamClass::Scale | ParamClass::Color => 3,
            ParamClass::Rotation => 4,
            ParamClass::Opacity => 1,
            ParamClass::Feature => feature_dim,
        }
    }
}

/// A single activated Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    /// Unit quaternion, (w, x, y, z).
    pub rotation: [f64; 4],
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub feature: Vec<f64>,
}

impl Gaussian {
    pub fn covariance(&self) -> Matrix3<f64> {
        covariance3d(self.rotation, &self.scale)
    }
}

/// The optimizable scene: raw (pre-activation) parameters of `N` Gaussians.
///
/// The same shape doubles as a gradient container (see
/// [`crate::grad::GradientBundle`]).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    feature_dim: usize,
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub scales: Vec<f64>,
    pub opacities: Vec<f64>,
    pub colors: Vec<f64>,
    pub features: Vec<f64>,
}

impl GaussianSet {
    pub fn empty(feature_dim: usize) -> Self {
        Self::zeros(0, feature_dim)
    }

    /// `n` Gaussians with every raw value zero (the rotation is therefore
    /// degenerate until set).
    pub fn zeros(n: usize, feature_dim: usize) -> Self {
        Self {
            feature_dim,
            positions: vec![0.0; n * 3],
            rotations: vec![0.0; n * 4],
            scales: vec![0.0; n * 3],
            opacities: vec![0.0; n],
            colors: vec![0.0; n * 3],
            features: vec![0.0; n * feature_dim],
        }
    }

    /// Builds raw parameters that activate to the given Gaussians.
    ///
    /// Opacity, color and feature values are clamped into (0, 1) by at most
    /// 1e-6 so the logit stays finite.
    pub fn from_gaussians(gaussians: &[Gaussian], feature_dim: usize) -> Result<Self> {
        let mut set = Self::zeros(gaussians.len(), feature_dim);
        for (i, g) in gaussians.iter().enumerate() {
            if g.feature.len() != feature_dim {
                return Err(Error::Shape(format!(
                    "gaussian {i} has {} feature channels, expected {feature_dim}",
                    g.feature.len()
                )));
            }
            if g.scale.iter().any(|&s| s <= 0.0) {
                return Err(Error::Invalid(format!("gaussian {i} has a non-positive scale")));
            }
            set.positions[i * 3..i * 3 + 3].copy_from_slice(g.position.as_slice());
            set.rotations[i * 4..i * 4 + 4].copy_from_slice(&g.rotation);
            for k in 0..3 {
                set.scales[i * 3 + k] = g.scale[k].ln();
                set.colors[i * 3 + k] = logit(g.color[k]);
            }
            set.opacities[i] = logit(g.opacity);
            for (dst, &f) in set.features[i * feature_dim..(i + 1) * feature_dim]
                .iter_mut()
                .zip(&g.feature)
            {
                *dst = logit(f);
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.opacities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacities.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn param(&self, class: ParamClass) -> &[f64] {
        match class {
            ParamClass::Position => &self.positions,
            ParamClass::Rotation => &self.rotations,
            ParamClass::Scale => &self.scales,
            ParamClass::Opacity => &self.opacities,
            ParamClass::Color => &self.colors,
            ParamClass::Feature => &self.features,
        }
    }

    pub fn param_mut(&mut self, class: ParamClass) -> &mut [f64] {
        match class {
            ParamClass::Position => &mut self.positions,
            ParamClass::Rotation => &mut self.rotations,
            ParamClass::Scale => &mut self.scales,
            ParamClass::Opacity => &mut self.opacities,
            ParamClass::Color => &mut self.colors,
            ParamClass::Feature => &mut self.features,
        }
    }

    /// Checks that every array has the length implied by `N` and `F`.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for class in ParamClass::ALL {
            let expected = n * class.width(self.feature_dim);
            if self.param(class).len() != expected {
                return Err(Error::Shape(format!(
                    "{} array has {} values, expected {expected}",
                    class.name(),
                    self.param(class).len()
                )));
            }
        }
        Ok(())
    }

    /// All raw parameters concatenated in [`ParamClass::ALL`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        ParamClass::ALL
            .iter()
            .flat_map(|&c| self.param(c).iter().copied())
            .collect()
    }

    /// Inverse of [`GaussianSet::to_flat`] for a set of the same shape.
    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for class in ParamClass::ALL {
            let dst = self.param_mut(class);
            let len = dst.len();
            dst.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len(), "flat parameter vector has the wrong length");
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.positions[i * 3..i * 3 + 3])
    }

    /// Keeps the Gaussians at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let f = self.feature_dim;
        let pick = |src: &[f64], w: usize| -> Vec<f64> {
            indices
                .iter()
                .flat_map(|&i| src[i * w..(i + 1) * w].iter().copied())
                .collect()
        };
        Self {
            feature_dim: f,
            positions: pick(&self.positions, 3),
            rotations: pick(&self.rotations, 4),
            scales: pick(&self.scales, 3),
            opacities: pick(&self.opacities, 1),
            colors: pick(&self.colors, 3),
            features: pick(&self.features, f),
        }
    }

    /// Applies the parameter activations.
    pub fn activate(&self) -> Result<ActivatedSet> {
        self.validate()?;
        let n = self.len();
        let mut rotations = Vec::with_capacity(n);
        for i in 0..n {
            let q = &self.rotations[i * 4..i * 4 + 4];
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::DegenerateRotation { index: i });
            }
            rotations.push([q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm]);
        }
        let positions = (0..n).map(|i| self.position(i)).collect();
        let scales = self
            .scales
            .chunks_exact(3)
            .map(|s| Vector3::new(s[0].exp(), s[1].exp(), s[2].exp()))
            .collect();
        let colors = self
            .colors
            .chunks_exact(3)
            .map(|c| Vector3::new(sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])))
            .collect();
        Ok(ActivatedSet {
            feature_dim: self.feature_dim,
            positions,
            rotations,
            scales,
            opacities: self.opacities.iter().map(|&o| sigmoid(o)).collect(),
            colors,
            features: self.features.iter().map(|&f| sigmoid(f)).collect(),
        })
    }
}

/// Activated parameters in structure-of-arrays layout, ready for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivatedSet {
    pub feature_dim: usize,
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<[f64; 4]>,
    pub scales: Vec<Vector3<f64>>,
    pub opacities: Vec<f64>,
    pub colors: Vec<Vector3<f64>>,
    /// `N × feature_dim`, row-major.
    pub features: Vec<f64>,
}

impl ActivatedSet {
    pub fn len(&self) -> usize {
        self.opacities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacities.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn gaussian(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            rotation: self.rotations[i],
            scale: self.scales[i],
            opacity: self.opacities[i],
            color: self.colors[i],
            feature: self.feature(i).to_vec(),
        }
    }
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub fn rotation_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Σ = R S Sᵀ Rᵀ for a unit quaternion and positive scales.
pub fn covariance3d(rotation: [f64; 4], scale: &Vector3<f64>) -> Matrix3<f64> {
    let m = rotation_matrix(rotation) * Matrix3::from_diagonal(scale);
    let sigma = m * m.transpose();
    // Exact symmetry; the product above can differ in the last ulp.
    (sigma + sigma.transpose()) * 0.5
}
