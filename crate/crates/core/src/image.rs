//! Dense float images and the separable Gaussian window used by the SSIM variants.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Row-major `height x width x channels` image, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, channels, data }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(alloc::format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width,
                self.height,
                self.channels,
                other.width,
                other.height,
                other.channels
            )))
        }
    }

    /// Single channel `c` as its own image.
    pub fn channel(&self, c: usize) -> Image {
        let mut out = Image::zeros(self.width, self.height, 1);
        for (o, px) in out.data.iter_mut().zip(self.data.chunks_exact(self.channels)) {
            *o = px[c];
        }
        out
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Image {
        Image { data: self.data.iter().map(|v| v.clamp(lo, hi)).collect(), ..*self }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }
}

/// Separable Gaussian window, renormalized over the in-bounds part near borders.
///
/// Output has the input's size; every output pixel is a proper weighted mean
/// of the pixels its window covers.
#[derive(Debug, Clone)]
pub struct WindowFilter {
    taps: Vec<f64>,
    radius: usize,
}

impl WindowFilter {
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if size % 2 == 0 || size < 3 {
            return Err(Error::Config(alloc::format!("window size must be odd and >= 3, got {size}")));
        }
        let radius = size / 2;
        let taps = (0..size)
            .map(|i| {
                let d = i as f64 - radius as f64;
                math::exp(-d * d / (2.0 * sigma * sigma))
            })
            .collect();
        Ok(Self { taps, radius })
    }

    /// Weights of the 1-D filter along an axis of length `n`, per output index, already normalized.
    fn axis_weights(&self, n: usize) -> Vec<(usize, Vec<f64>)> {
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(self.radius);
                let hi = (i + self.radius).min(n - 1);
                let mut w: Vec<f64> = (lo..=hi).map(|j| self.taps[j + self.radius - i]).collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                (lo, w)
            })
            .collect()
    }

    /// Filter a single-channel plane of size `width x height`.
    pub fn apply(&self, plane: &[f64], width: usize, height: usize) -> Vec<f64> {
        let wx = self.axis_weights(width);
        let wy = self.axis_weights(height);
        let mut tmp = vec![0.0; width * height];
        for y in 0..height {
            let row = &plane[y * width..(y + 1) * width];
            for (x, (lo, w)) in wx.iter().enumerate() {
                tmp[y * width + x] = w.iter().enumerate().map(|(k, wk)| wk * row[lo + k]).sum();
            }
        }
        let mut out = vec![0.0; width * height];
        for (y, (lo, w)) in wy.iter().enumerate() {
            for x in 0..width {
                out[y * width + x] = w.iter().enumerate().map(|(k, wk)| wk * tmp[(lo + k) * width + x]).sum();
            }
        }
        out
    }

    /// Transpose of [`WindowFilter::apply`].
    pub fn apply_adjoint(&self, grad: &[f64], width: usize, height: usize) -> Vec<f64> {
        let wx = self.axis_weights(width);
        let wy = self.axis_weights(height);
        let mut tmp = vec![0.0; width * height];
        for (y, (lo, w)) in wy.iter().enumerate() {
            for x in 0..width {
                let g = grad[y * width + x];
                for (k, wk) in w.iter().enumerate() {
                    tmp[(lo + k) * width + x] += wk * g;
                }
            }
        }
        let mut out = vec![0.0; width * height];
        for y in 0..height {
            for (x, (lo, w)) in wx.iter().enumerate() {
                let g = tmp[y * width + x];
                for (k, wk) in w.iter().enumerate() {
                    out[y * width + lo + k] += wk * g;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_preserves_constants() {
        let f = WindowFilter::gaussian(11, 1.5).unwrap();
        let out = f.apply(&vec![0.25; 7 * 5], 7, 5);
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn adjoint_is_transpose() {
        let f = WindowFilter::gaussian(5, 1.5).unwrap();
        let (w, h) = (6, 4);
        let a: Vec<f64> = (0..w * h).map(|i| ((i * 7) % 5) as f64 - 1.3).collect();
        let b: Vec<f64> = (0..w * h).map(|i| ((i * 3) % 11) as f64 * 0.1).collect();
        let fa = f.apply(&a, w, h);
        let ftb = f.apply_adjoint(&b, w, h);
        let lhs: f64 = fa.iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.iter().zip(&ftb).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn rejects_even_window() {
        assert!(WindowFilter::gaussian(4, 1.5).is_err());
    }
}
