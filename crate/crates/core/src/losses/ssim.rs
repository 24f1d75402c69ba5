//! Windowed SSIM over single- or multi-channel images, with its gradient.
//!
//! Local statistics use an 11×11 Gaussian window (σ = 1.5) evaluated only
//! where the window fits inside the image; the score is the mean over those
//! positions and over channels.

use crate::error::{Error, Result};
use crate::image::Image;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
/// Dynamic range of the inputs.
pub const RANGE: f64 = 1.0;

pub fn c1() -> f64 {
    (K1 * RANGE).powi(2)
}

pub fn c2() -> f64 {
    (K2 * RANGE).powi(2)
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn window_taps() -> [f64; WINDOW] {
    let mut taps = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable "valid" filter of a single-channel plane.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + WINDOW]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (j, t) in taps.iter().enumerate() {
            let src_row = &horiz[(y + j) * ow..(y + j + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(src_row) {
                *o += t * v;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads each window value back over the
/// pixels it covered.
fn filter_valid_transpose(src: &[f64], w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut vert = vec![0.0; ow * h];
    for y in 0..oh {
        for (j, t) in taps.iter().enumerate() {
            let dst = &mut vert[(y + j) * ow..(y + j + 1) * ow];
            for (d, v) in dst.iter_mut().zip(&src[y * ow..(y + 1) * ow]) {
                *d += t * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = vert[y * ow + x];
            for (j, t) in taps.iter().enumerate() {
                out[y * w + x + j] += t * v;
            }
        }
    }
    out
}

fn check_inputs(a: &Image, b: &Image) -> Result<()> {
    a.check_same_shape(b, "ssim inputs")?;
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::ImageTooSmall {
            width: a.width,
            height: a.height,
            window: WINDOW,
        });
    }
    Ok(())
}

/// Mean SSIM of `a` against `b`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_impl(a, b, false).map(|(s, _)| s)
}

/// SSIM together with its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    ssim_impl(a, b, true).map(|(s, g)| (s, g.expect("gradient requested")))
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    check_inputs(a, b)?;
    let (w, h, ch) = (a.width, a.height, a.channels);
    let taps = window_taps();
    let (c1, c2) = (c1(), c2());
    let positions = (w - WINDOW + 1) * (h - WINDOW + 1);
    let norm = 1.0 / (positions * ch) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h, ch));

    for c in 0..ch {
        let x = a.channel(c).data;
        let y = b.channel(c).data;
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = filter_valid(&x, w, h, &taps);
        let mu_y = filter_valid(&y, w, h, &taps);
        let e_xx = filter_valid(&xx, w, h, &taps);
        let e_yy = filter_valid(&yy, w, h, &taps);
        let e_xy = filter_valid(&xy, w, h, &taps);

        let mut coef_a = vec![0.0; positions];
        let mut coef_b = vec![0.0; positions];
        let mut coef_c = vec![0.0; positions];
        for p in 0..positions {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let sxx = e_xx[p] - mx * mx;
            let syy = e_yy[p] - my * my;
            let sxy = e_xy[p] - mx * my;
            let n1 = 2.0 * mx * my + c1;
            let n2 = 2.0 * sxy + c2;
            let d1 = mx * mx + my * my + c1;
            let d2 = sxx + syy + c2;
            let s = (n1 * n2) / (d1 * d2);
            total += s;
            if want_grad {
                // Partials of s with respect to μx, σx² and σxy.
                let ds_dmu = 2.0 * my * n2 / (d1 * d2) - s * 2.0 * mx / d1;
                let ds_dvar = -s / d2;
                let ds_dcov = 2.0 * n1 / (d1 * d2);
                // ∂s/∂x_k = w_k (ds_dmu + ds_dvar (2x_k − 2μx) + ds_dcov (y_k − μy))
                coef_a[p] = norm * (ds_dmu - 2.0 * mx * ds_dvar - my * ds_dcov);
                coef_b[p] = norm * 2.0 * ds_dvar;
                coef_c[p] = norm * ds_dcov;
            }
        }
        if let Some(g) = grad.as_mut() {
            let ta = filter_valid_transpose(&coef_a, w, h, &taps);
            let tb = filter_valid_transpose(&coef_b, w, h, &taps);
            let tc = filter_valid_transpose(&coef_c, w, h, &taps);
            for k in 0..w * h {
                g.data[k * ch + c] = ta[k] + tb[k] * x[k] + tc[k] * y[k];
            }
        }
    }
    Ok((total * norm, grad))
}
