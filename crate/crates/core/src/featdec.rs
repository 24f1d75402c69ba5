//! Per-pixel decoder from splatted feature vectors to surface embeddings.
//!
//! Two ReLU layers (F→32→32) and a sigmoid output layer (32→E), applied
//! after compositing to every pixel with alpha above [`ALPHA_EPS`].
//! Background pixels decode to zero.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::{self, take_tensor, Tensor, DECODER_MAGIC};
use crate::error::{Error, Result};
use crate::gaussian::sigmoid;
use crate::image::{FeatureImage, Image};
use crate::nn::Dense;

pub const HIDDEN: usize = 32;
pub const DEFAULT_EMBED_DIM: usize = 3;
pub const ALPHA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub layers: [Dense; 3],
}

impl DecoderWeights {
    pub fn init(feature_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layers: [
                Dense::init(feature_dim, HIDDEN, &mut rng),
                Dense::init(HIDDEN, HIDDEN, &mut rng),
                Dense::init(HIDDEN, embed_dim, &mut rng),
            ],
        }
    }

    pub fn zeros(feature_dim: usize, embed_dim: usize) -> Self {
        Self {
            layers: [
                Dense::zeros(feature_dim, HIDDEN),
                Dense::zeros(HIDDEN, HIDDEN),
                Dense::zeros(HIDDEN, embed_dim),
            ],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.feature_dim(), self.embed_dim())
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[2].fan_out
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers[0].fan_out != HIDDEN || self.layers[1].fan_in != HIDDEN || self.layers[1].fan_out != HIDDEN || self.layers[2].fan_in != HIDDEN {
            return Err(Error::Shape("decoder hidden layers must be 32 wide".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.check(&format!("dec.{i}"))?;
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.layers.iter().for_each(|l| l.flatten_into(&mut out));
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!("{} values for {} decoder parameters", flat.len(), self.param_count())));
        }
        let mut rest = flat;
        for l in &mut self.layers {
            rest = l.assign_from(rest);
        }
        Ok(())
    }

    fn add_assign(&mut self, other: &DecoderWeights) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            tensors.push(Tensor::new(format!("dec.{i}.weight"), l.fan_in, l.fan_out, &l.weight));
            tensors.push(Tensor::new(format!("dec.{i}.bias"), 1, l.fan_out, &l.bias));
        }
        checkpoint::encode(DECODER_MAGIC, &tensors)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let mut tensors = checkpoint::decode(bytes, DECODER_MAGIC)?;
        let mut load = |i: usize| -> Result<Dense> {
            let w = take_tensor(&mut tensors, &format!("dec.{i}.weight"))?;
            let b = take_tensor(&mut tensors, &format!("dec.{i}.bias"))?;
            if b.data.len() != w.cols {
                return Err(Error::Shape(format!("decoder layer {i} bias has the wrong length")));
            }
            Ok(Dense {
                fan_in: w.rows,
                fan_out: w.cols,
                weight: w.to_f64(),
                bias: b.to_f64(),
            })
        };
        let layers = [load(0)?, load(1)?, load(2)?];
        if let Some(extra) = tensors.first() {
            return Err(Error::Shape(format!("unexpected checkpoint tensor {}", extra.name)));
        }
        let w = Self { layers };
        w.validate()?;
        Ok(w)
    }
}

struct PixelTrace {
    z1: Vec<f64>,
    z2: Vec<f64>,
    out: Vec<f64>,
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

fn pixel_forward(w: &DecoderWeights, f: &[f64]) -> PixelTrace {
    let z1 = w.layers[0].forward(f);
    let z2 = w.layers[1].forward(&relu(&z1));
    let out = w.layers[2].forward(&relu(&z2)).into_iter().map(sigmoid).collect();
    PixelTrace { z1, z2, out }
}

/// Decodes one feature vector.
pub fn decode_pixel(w: &DecoderWeights, feature: &[f64]) -> Vec<f64> {
    pixel_forward(w, feature).out
}

fn check_inputs(features: &FeatureImage, alpha: &Image, w: &DecoderWeights) -> Result<()> {
    w.validate()?;
    if features.channels != w.feature_dim() {
        return Err(Error::Shape(format!(
            "channel mismatch: feature image has {} channels, decoder expects {}",
            features.channels,
            w.feature_dim()
        )));
    }
    if alpha.channels != 1 || alpha.width != features.width || alpha.height != features.height {
        return Err(Error::Shape("alpha must be a single-channel image of the feature size".into()));
    }
    Ok(())
}

/// Decodes every covered pixel; uncovered pixels are zero.
pub fn decode(features: &FeatureImage, alpha: &Image, w: &DecoderWeights) -> Result<FeatureImage> {
    check_inputs(features, alpha, w)?;
    let (f, e) = (features.channels, w.embed_dim());
    let mut out = Image::new(features.width, features.height, e);
    out.data
        .par_chunks_mut(e)
        .zip(features.data.par_chunks(f))
        .zip(alpha.data.par_iter())
        .for_each(|((o, px), &a)| {
            if a > ALPHA_EPS {
                o.copy_from_slice(&decode_pixel(w, px));
            }
        });
    Ok(out)
}

/// Gradients of `⟨grad_out, decode(features)⟩` with respect to the weights
/// and the feature image. Rows are processed in parallel and their weight
/// gradients summed in row order.
pub fn decode_backward(features: &FeatureImage, alpha: &Image, w: &DecoderWeights, grad_out: &Image) -> Result<(DecoderWeights, FeatureImage)> {
    check_inputs(features, alpha, w)?;
    let (f, e, width) = (features.channels, w.embed_dim(), features.width);
    if grad_out.channels != e || grad_out.width != width || grad_out.height != features.height {
        return Err(Error::Shape("decoder adjoint has the wrong shape".into()));
    }
    let rows: Vec<(DecoderWeights, Vec<f64>)> = (0..features.height)
        .into_par_iter()
        .map(|y| {
            let mut gw = w.zeros_like();
            let mut gf = vec![0.0; width * f];
            for x in 0..width {
                let i = y * width + x;
                if alpha.data[i] <= ALPHA_EPS {
                    continue;
                }
                let go = &grad_out.data[i * e..(i + 1) * e];
                if go.iter().all(|&g| g == 0.0) {
                    continue;
                }
                let px = &features.data[i * f..(i + 1) * f];
                let t = pixel_forward(w, px);
                let g3: Vec<f64> = t.out.iter().zip(go).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                let mut g2 = w.layers[2].backward(&relu(&t.z2), &g3, &mut gw.layers[2]);
                g2.iter_mut().zip(&t.z2).for_each(|(g, &z)| *g = if z > 0.0 { *g } else { 0.0 });
                let mut g1 = w.layers[1].backward(&relu(&t.z1), &g2, &mut gw.layers[1]);
                g1.iter_mut().zip(&t.z1).for_each(|(g, &z)| *g = if z > 0.0 { *g } else { 0.0 });
                let gx = w.layers[0].backward(px, &g1, &mut gw.layers[0]);
                gf[x * f..(x + 1) * f].copy_from_slice(&gx);
            }
            (gw, gf)
        })
        .collect();
    let mut gw = w.zeros_like();
    let mut gf = Image::new(width, features.height, f);
    for (y, (g, row)) in rows.iter().enumerate() {
        gw.add_assign(g);
        gf.data[y * width * f..(y + 1) * width * f].copy_from_slice(row);
    }
    Ok((gw, gf))
}

/// Hash of the ReLU pattern over covered pixels.
pub fn activation_fingerprint(features: &FeatureImage, alpha: &Image, w: &DecoderWeights) -> Result<u64> {
    check_inputs(features, alpha, w)?;
    let mut h = DefaultHasher::new();
    let f = features.channels;
    for (i, &a) in alpha.data.iter().enumerate() {
        if a > ALPHA_EPS {
            let t = pixel_forward(w, &features.data[i * f..(i + 1) * f]);
            t.z1.iter().chain(&t.z2).for_each(|&z| (z > 0.0).hash(&mut h));
        }
    }
    Ok(h.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{finite_diff_check_with, FdOptions};

    fn features(w: usize, h: usize, f: usize) -> Image {
        let mut img = Image::new(w, h, f);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = 0.5 + 0.45 * (i as f64 * 0.73).sin();
        }
        img
    }

    #[test]
    fn zero_weights_decode_to_half() {
        let w = DecoderWeights::zeros(8, 3);
        let out = decode(&features(4, 3, 8), &Image::filled(4, 3, 1, 1.0), &w).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn background_decodes_to_zero() {
        let w = DecoderWeights::init(8, 3, 1);
        let out = decode(&features(4, 3, 8), &Image::new(4, 3, 1), &w).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch() {
        let w = DecoderWeights::init(8, 3, 1);
        assert!(decode(&features(4, 3, 5), &Image::filled(4, 3, 1, 1.0), &w).is_err());
    }

    #[test]
    fn matches_straight_line_oracle() {
        let w = DecoderWeights::init(8, 3, 2);
        let px: Vec<f64> = (0..8).map(|i| (i as f64 * 0.3).cos().abs()).collect();
        let mut h = px.clone();
        for (li, l) in w.layers.iter().enumerate() {
            let mut z = vec![0.0; l.fan_out];
            for o in 0..l.fan_out {
                z[o] = l.bias[o];
                for i in 0..l.fan_in {
                    z[o] += h[i] * l.weight[i * l.fan_out + o];
                }
            }
            h = if li < 2 { z.iter().map(|v| v.max(0.0)).collect() } else { z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect() };
        }
        for (a, b) in decode_pixel(&w, &px).iter().zip(&h) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut w = DecoderWeights::init(8, 3, 3);
        let q: Vec<f64> = w.to_flat().iter().map(|&v| v as f32 as f64).collect();
        w.set_flat(&q).unwrap();
        let bytes = w.to_checkpoint();
        assert_eq!(&bytes[..7], b"HFGDEC1");
        assert_eq!(DecoderWeights::from_checkpoint(&bytes).unwrap(), w);
    }

    #[test]
    fn gradients_match_fd() {
        let (wd, ht, f) = (4, 3, 8);
        let feats = features(wd, ht, f);
        let mut alpha = Image::filled(wd, ht, 1, 0.7);
        alpha.data[5] = 0.0;
        let w = DecoderWeights::init(f, 3, 4);
        let adj = features(wd, ht, 3);
        let objective = |feats: &Image, w: &DecoderWeights| -> f64 {
            let out = decode(feats, &alpha, w).unwrap();
            out.data.iter().zip(&adj.data).map(|(a, b)| a * b).sum()
        };
        let (gw, gf) = decode_backward(&feats, &alpha, &w, &adj).unwrap();

        let mut probe = w.clone();
        let regime = |p: &[f64]| {
            let mut q = w.clone();
            q.set_flat(p).unwrap();
            activation_fingerprint(&feats, &alpha, &q).unwrap()
        };
        let opts = FdOptions {
            eps: 1e-5,
            indices: None,
            regime: Some(&regime),
            shrink: 0,
        };
        let r = finite_diff_check_with(
            |p| {
                probe.set_flat(p).unwrap();
                objective(&feats, &probe)
            },
            &w.to_flat(),
            &gw.to_flat(),
            &opts,
        );
        assert!(r.max_rel_error < 1e-4, "{r:?}");

        let mut fprobe = feats.clone();
        let regime = |p: &[f64]| {
            let mut q = feats.clone();
            q.data.copy_from_slice(p);
            activation_fingerprint(&q, &alpha, &w).unwrap()
        };
        let opts = FdOptions {
            eps: 1e-5,
            indices: None,
            regime: Some(&regime),
            shrink: 0,
        };
        let r = finite_diff_check_with(
            |p| {
                fprobe.data.copy_from_slice(p);
                objective(&fprobe, &w)
            },
            &feats.data,
            &gf.data,
            &opts,
        );
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
