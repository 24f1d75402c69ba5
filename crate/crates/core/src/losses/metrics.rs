use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::keypoints::{KeypointSet, LEFT_SHOULDER, NUM_JOINTS, RIGHT_HIP};

use super::check_keypoints;

/// PCK threshold as a fraction of the torso diameter.
pub const PCK_THRESHOLD: f64 = 0.2;

/// Mean per-joint Euclidean error.
pub fn mpjpe(pred: &KeypointSet, gt: &KeypointSet) -> Result<f64> {
    check_keypoints(pred, gt)?;
    let sum: f64 = (0..NUM_JOINTS)
        .map(|j| {
            pred.joint(j)
                .iter()
                .zip(gt.joint(j))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(sum / NUM_JOINTS as f64)
}

/// Fraction of 2D joints within `threshold_ratio` torso diameters of the
/// ground truth. The torso diameter is the ground-truth distance between
/// the left shoulder and the right hip.
pub fn pck(pred: &KeypointSet, gt: &KeypointSet, threshold_ratio: f64) -> Result<f64> {
    check_keypoints(pred, gt)?;
    if gt.dim != 2 {
        return Err(Error::Shape("PCK expects 2D keypoints".into()));
    }
    let torso = (gt.joint2(LEFT_SHOULDER) - gt.joint2(RIGHT_HIP)).norm();
    if torso <= 1e-12 {
        return Err(Error::DegenerateTorso);
    }
    let limit = threshold_ratio * torso;
    let hits = (0..NUM_JOINTS)
        .filter(|&j| (pred.joint2(j) - gt.joint2(j)).norm() <= limit)
        .count();
    Ok(hits as f64 / NUM_JOINTS as f64)
}

/// Peak signal-to-noise ratio with peak 1; `+inf` for identical images.
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    pred.check_same_shape(gt, "psnr inputs")?;
    let mse = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.data.len().max(1) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

/// Mean squared error over masked pixels (all pixels without a mask).
pub fn feature_mse(pred: &Image, gt: &Image, mask: Option<&Mask>) -> Result<f64> {
    pred.check_same_shape(gt, "feature inputs")?;
    let ch = pred.channels;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..pred.pixels() {
        if let Some(m) = mask {
            if !m.data[i] {
                continue;
            }
        }
        for c in 0..ch {
            sum += (pred.data[i * ch + c] - gt.data[i * ch + c]).powi(2);
        }
        n += ch;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Evaluation metrics; absent entries were not measured.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricReport {
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub mpjpe: Option<f64>,
    pub pck: Option<f64>,
    pub feature_mse: Option<f64>,
}

fn format_value(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

impl MetricReport {
    fn entries(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("psnr", self.psnr),
            ("ssim", self.ssim),
            ("mpjpe", self.mpjpe),
            ("pck", self.pck),
            ("feature_mse", self.feature_mse),
        ]
    }

    /// `key=value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        self.entries()
            .iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k}={}\n", format_value(v))))
            .collect()
    }

    /// A JSON object; infinite PSNR is written as the string `"inf"`.
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for (k, v) in self.entries() {
            if let Some(v) = v {
                let value = if v.is_finite() { json!(v) } else { json!(format_value(v)) };
                map.insert(k.to_string(), value);
            }
        }
        Value::Object(map)
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Invalid("metric report must be a JSON object".into()))?;
        let get = |k: &str| -> Result<Option<f64>> {
            match obj.get(k) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) if s == "inf" => Ok(Some(f64::INFINITY)),
                Some(v) => v
                    .as_f64()
                    .map(Some)
                    .ok_or_else(|| Error::Invalid(format!("metric {k} is not a number"))),
            }
        };
        Ok(Self {
            psnr: get("psnr")?,
            ssim: get("ssim")?,
            mpjpe: get("mpjpe")?,
            pck: get("pck")?,
            feature_mse: get("feature_mse")?,
        })
    }
}
