//! Training losses and evaluation metrics.
//!
//! Every loss has a `*_grad` twin returning the value together with the
//! gradient with respect to the prediction. Image losses are averaged over
//! masked pixels and channels.

mod metrics;
pub mod ssim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::keypoints::KeypointSet;

pub use metrics::{feature_mse, mpjpe, pck, psnr, MetricReport, PCK_THRESHOLD};
pub use ssim::{ssim, ssim_with_grad};

/// Weight of the masked MAE term in the image loss.
pub const IMAGE_BETA: f64 = 1.6;
/// Weight of the `1 − SSIM` term in the image loss.
pub const IMAGE_GAMMA: f64 = 0.4;
/// Per-step decay of the depth loss.
pub const DEPTH_DECAY: f64 = 0.9;

/// Loss components of one optimization step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_image: f64,
    pub l_mae: f64,
    pub l_ssim: f64,
    pub l_depth: f64,
    pub l_pose: f64,
    pub l_feature: f64,
    pub total: f64,
}

impl LossReport {
    /// Recomputes `total` from the components.
    pub fn finish(mut self) -> Self {
        self.total = self.l_image + self.l_depth + self.l_pose + self.l_feature;
        self
    }
}

fn check_masked(pred: &Image, gt: &Image, mask: &Mask, what: &str) -> Result<usize> {
    pred.check_same_shape(gt, what)?;
    mask.check_matches(pred)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(n * pred.channels)
}

fn masked_l1_impl(pred: &Image, gt: &Image, mask: &Mask, grad: Option<&mut Image>, what: &str) -> Result<f64> {
    let count = check_masked(pred, gt, mask, what)?;
    let ch = pred.channels;
    let scale = 1.0 / count as f64;
    let mut sum = 0.0;
    let mut grad = grad;
    for (i, &m) in mask.data.iter().enumerate() {
        if !m {
            continue;
        }
        for c in 0..ch {
            let k = i * ch + c;
            let d = pred.data[k] - gt.data[k];
            sum += d.abs();
            if let Some(g) = grad.as_deref_mut() {
                // sign(0) = 0 keeps the subgradient symmetric.
                g.data[k] += scale * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
            }
        }
    }
    Ok(sum * scale)
}

/// Mean absolute error over masked pixels and all channels.
pub fn masked_l1(pred: &Image, gt: &Image, mask: &Mask) -> Result<f64> {
    masked_l1_impl(pred, gt, mask, None, "masked L1")
}

pub fn masked_l1_grad(pred: &Image, gt: &Image, mask: &Mask) -> Result<(f64, Image)> {
    let mut g = Image::new(pred.width, pred.height, pred.channels);
    let v = masked_l1_impl(pred, gt, mask, Some(&mut g), "masked L1")?;
    Ok((v, g))
}

/// Image loss terms `(l_image, l_mae, l_ssim)`.
pub fn loss_image_terms(pred: &Image, gt: &Image, mask: &Mask) -> Result<(f64, f64, f64)> {
    let mae = masked_l1_impl(pred, gt, mask, None, "image loss")?;
    let s = ssim(&pred.masked(mask), &gt.masked(mask))?;
    let l_ssim = 1.0 - s;
    Ok((IMAGE_BETA * mae + IMAGE_GAMMA * l_ssim, mae, l_ssim))
}

/// `1.6 · MAE + 0.4 · (1 − SSIM)`, with SSIM taken on the masked images.
pub fn loss_image(pred: &Image, gt: &Image, mask: &Mask) -> Result<f64> {
    loss_image_terms(pred, gt, mask).map(|t| t.0)
}

/// Image loss terms plus the gradient of `l_image` with respect to `pred`.
pub fn loss_image_grad(pred: &Image, gt: &Image, mask: &Mask) -> Result<((f64, f64, f64), Image)> {
    loss_image_grad_weighted(pred, gt, mask, IMAGE_BETA, IMAGE_GAMMA)
}

/// [`loss_image_grad`] with explicit MAE and SSIM weights.
pub fn loss_image_grad_weighted(pred: &Image, gt: &Image, mask: &Mask, beta: f64, gamma: f64) -> Result<((f64, f64, f64), Image)> {
    let mut g = Image::new(pred.width, pred.height, pred.channels);
    let mae = masked_l1_impl(pred, gt, mask, Some(&mut g), "image loss")?;
    g.data.iter_mut().for_each(|v| *v *= beta);
    let (s, gs) = ssim_with_grad(&pred.masked(mask), &gt.masked(mask))?;
    let ch = pred.channels;
    for (i, &m) in mask.data.iter().enumerate() {
        if m {
            for c in 0..ch {
                g.data[i * ch + c] -= gamma * gs.data[i * ch + c];
            }
        }
    }
    let l_ssim = 1.0 - s;
    Ok(((beta * mae + gamma * l_ssim, mae, l_ssim), g))
}

/// `Σₜ decay^(T−t) · L1(dₜ)` over a sequence of depth predictions.
pub fn loss_depth(preds: &[Image], gt: &Image, mask: &Mask, decay: f64) -> Result<f64> {
    loss_depth_impl(preds, gt, mask, decay, false).map(|(v, _)| v)
}

pub fn loss_depth_grad(preds: &[Image], gt: &Image, mask: &Mask, decay: f64) -> Result<(f64, Vec<Image>)> {
    loss_depth_impl(preds, gt, mask, decay, true)
}

fn loss_depth_impl(preds: &[Image], gt: &Image, mask: &Mask, decay: f64, want: bool) -> Result<(f64, Vec<Image>)> {
    if preds.is_empty() {
        return Err(Error::Invalid("depth loss needs at least one prediction".into()));
    }
    let steps = preds.len();
    let mut total = 0.0;
    let mut grads = Vec::new();
    for (t, pred) in preds.iter().enumerate() {
        let weight = decay.powi((steps - 1 - t) as i32);
        if want {
            let mut g = Image::new(pred.width, pred.height, pred.channels);
            total += weight * masked_l1_impl(pred, gt, mask, Some(&mut g), "depth loss")?;
            g.data.iter_mut().for_each(|v| *v *= weight);
            grads.push(g);
        } else {
            total += weight * masked_l1_impl(pred, gt, mask, None, "depth loss")?;
        }
    }
    Ok((total, grads))
}

fn check_keypoints(pred: &KeypointSet, gt: &KeypointSet) -> Result<()> {
    pred.validate()?;
    gt.validate()?;
    if pred.dim != gt.dim {
        return Err(Error::Shape(format!("keypoint dimensions {} and {}", pred.dim, gt.dim)));
    }
    Ok(())
}

/// Mean squared coordinate error over all joints.
pub fn loss_pose(pred: &KeypointSet, gt: &KeypointSet) -> Result<f64> {
    loss_pose_grad(pred, gt).map(|(v, _)| v)
}

pub fn loss_pose_grad(pred: &KeypointSet, gt: &KeypointSet) -> Result<(f64, Vec<f64>)> {
    check_keypoints(pred, gt)?;
    let n = pred.coords.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.coords.len());
    for (p, g) in pred.coords.iter().zip(&gt.coords) {
        let d = p - g;
        sum += d * d;
        grad.push(2.0 * d / n);
    }
    Ok((sum / n, grad))
}

/// Masked mean absolute error between feature images.
pub fn loss_feature(pred: &Image, gt: &Image, mask: &Mask) -> Result<f64> {
    masked_l1_impl(pred, gt, mask, None, "feature loss")
}

pub fn loss_feature_grad(pred: &Image, gt: &Image, mask: &Mask) -> Result<(f64, Image)> {
    masked_l1_grad(pred, gt, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::finite_diff_check;
    use crate::keypoints::NUM_JOINTS;

    fn wave(w: usize, h: usize, ch: usize, phase: f64) -> Image {
        let mut img = Image::new(w, h, ch);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = 0.5 + 0.3 * (i as f64 * 0.61 + phase).sin();
        }
        img
    }

    #[test]
    fn image_loss_zero_at_target() {
        let a = wave(12, 12, 3, 0.0);
        let m = Mask::new(12, 12, true);
        assert!(loss_image(&a, &a, &m).unwrap().abs() < 1e-12);
    }

    #[test]
    fn constant_offset_image_loss() {
        let a = Image::filled(12, 12, 3, 0.3);
        let b = Image::filled(12, 12, 3, 0.4);
        let m = Mask::new(12, 12, true);
        let (total, mae, _) = loss_image_terms(&a, &b, &m).unwrap();
        assert!((IMAGE_BETA * mae - 0.16).abs() < 1e-12);
        let (c1, c2) = (ssim::c1(), ssim::c2());
        let s = (2.0 * 0.3 * 0.4 + c1) * c2 / ((0.09 + 0.16 + c1) * c2);
        assert!((total - (0.16 + 0.4 * (1.0 - s))).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let a = Image::new(12, 12, 3);
        let m = Mask::new(12, 12, false);
        assert!(matches!(loss_image(&a, &a, &m), Err(Error::EmptyMask)));
        assert!(matches!(loss_feature(&a, &a, &m), Err(Error::EmptyMask)));
    }

    #[test]
    fn depth_loss_decays_earlier_steps() {
        let gt = Image::filled(4, 4, 1, 1.0);
        let m = Mask::new(4, 4, true);
        let p1 = Image::filled(4, 4, 1, 1.5);
        let p2 = Image::filled(4, 4, 1, 0.8);
        assert!((loss_depth(std::slice::from_ref(&p1), &gt, &m, DEPTH_DECAY).unwrap() - 0.5).abs() < 1e-12);
        let two = loss_depth(&[p1, p2], &gt, &m, DEPTH_DECAY).unwrap();
        assert!((two - (0.9 * 0.5 + 0.2)).abs() < 1e-12);
        assert!(loss_depth(&[], &gt, &m, DEPTH_DECAY).is_err());
    }

    #[test]
    fn pose_loss_single_joint_offset() {
        let gt = KeypointSet::zeros(3);
        let mut pred = gt.clone();
        pred.coords[3 * 4] = 1.0;
        let v = loss_pose(&pred, &gt).unwrap();
        assert!((v - 1.0 / (NUM_JOINTS * 3) as f64).abs() < 1e-15);
        assert!(loss_pose(&KeypointSet::zeros(2), &gt).is_err());
    }

    #[test]
    fn feature_loss_uniform_offset() {
        let a = wave(5, 4, 3, 0.2);
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v += 0.25);
        let m = Mask::new(5, 4, true);
        assert!((loss_feature(&a, &b, &m).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn masked_pixels_are_ignored() {
        let a = Image::filled(4, 4, 1, 0.0);
        let mut b = a.clone();
        b.data[0] = 7.0;
        let mut m = Mask::new(4, 4, true);
        m.data[0] = false;
        assert_eq!(masked_l1(&a, &b, &m).unwrap(), 0.0);
    }

    #[test]
    fn image_loss_gradient_matches_fd() {
        let pred = wave(13, 12, 3, 0.4);
        let gt = wave(13, 12, 3, 2.0);
        let mut m = Mask::new(13, 12, true);
        for i in (0..m.data.len()).step_by(7) {
            m.data[i] = false;
        }
        let (_, g) = loss_image_grad(&pred, &gt, &m).unwrap();
        let mut probe = pred.clone();
        let r = finite_diff_check(
            |p| {
                probe.data.copy_from_slice(p);
                loss_image(&probe, &gt, &m).unwrap()
            },
            &pred.data,
            &g.data,
            1e-6,
        );
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn report_total_is_sum() {
        let r = LossReport {
            l_image: 0.5,
            l_depth: 0.25,
            l_pose: 0.125,
            l_feature: 1.0,
            ..Default::default()
        }
        .finish();
        assert_eq!(r.total, 1.875);
    }
}
