//! Dense per-pixel grids: color, depth, feature and alpha images, and masks.

use crate::error::{Error, Result};

/// Row-major `height × width × channels` grid of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Three-channel color image.
pub type RasterImage = Image;
/// Single-channel depth in world units, 0 where there is no surface.
pub type DepthMap = Image;
/// `F`- or `E`-channel feature image.
pub type FeatureImage = Image;

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Zeroes every pixel outside the mask.
    pub fn masked(&self, mask: &Mask) -> Image {
        let mut out = self.clone();
        for (px, &m) in out.data.chunks_exact_mut(self.channels).zip(&mask.data) {
            if !m {
                px.fill(0.0);
            }
        }
        out
    }

    /// 2× box-filter downsample; an odd last row or column is dropped.
    pub fn downsample2(&self) -> Image {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = Image::new(w, h, self.channels);
        for y in 0..h {
            for x in 0..w {
                for c in 0..self.channels {
                    let s = self.get(2 * x, 2 * y, c)
                        + self.get(2 * x + 1, 2 * y, c)
                        + self.get(2 * x, 2 * y + 1, c)
                        + self.get(2 * x + 1, 2 * y + 1, c);
                    out.pixel_mut(x, y)[c] = s * 0.25;
                }
            }
        }
        out
    }
}

/// Foreground mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Pixels whose single-channel value exceeds `threshold`.
    pub fn from_threshold(image: &Image, threshold: f64) -> Self {
        assert_eq!(image.channels, 1, "mask threshold needs a single-channel image");
        Self {
            width: image.width,
            height: image.height,
            data: image.data.iter().map(|&v| v > threshold).collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn check_matches(&self, image: &Image) -> Result<()> {
        if self.width == image.width && self.height == image.height {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "mask {}x{} vs image {}x{}",
                self.width, self.height, image.width, image.height
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_zeroes_background() {
        let img = Image::filled(2, 1, 3, 0.5);
        let mut mask = Mask::new(2, 1, true);
        mask.data[1] = false;
        let m = img.masked(&mask);
        assert_eq!(m.pixel(0, 0), &[0.5, 0.5, 0.5]);
        assert_eq!(m.pixel(1, 0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn channel_extraction() {
        let img = Image::from_data(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(img.channel(1).data, vec![2.0, 4.0]);
        assert!(Image::from_data(1, 2, 2, vec![1.0]).is_err());
    }
}
