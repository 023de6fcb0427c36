//! Raster types shared across the pipeline.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::bilinear_taps;

/// Interleaved RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "rgb buffer of {} values for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Luma with (0.299, 0.587, 0.114) weights.
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect();
        GrayImage { width: self.width, height: self.height, data }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(x, y, self.pixel(self.width - 1 - x, y));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Per-pixel depth in meters, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// A [`DepthMap`] in which `0.0` marks pixels without a measurement.
pub type SparseDepthImage = DepthMap;

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "depth buffer of {} values for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, depth: f64) {
        self.data[y * self.width + x] = depth;
    }

    pub fn same_extent(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn nonzero_count(&self) -> usize {
        self.data.iter().filter(|&&d| d != 0.0).count()
    }

    /// `(x, y, depth)` of every nonzero pixel in row-major order.
    pub fn measurements(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &d)| d != 0.0)
            .map(move |(i, &d)| (i % self.width, i / self.width, d))
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x, y, self.get(self.width - 1 - x, y));
            }
        }
        out
    }
}

/// Bilinear resampling to `width × height` with half-pixel centers and
/// clamped borders (the convention of the network's upsampling layers).
pub fn resize_bilinear(src: &DepthMap, width: usize, height: usize) -> DepthMap {
    if src.width == width && src.height == height {
        return src.clone();
    }
    let xtaps: Vec<_> = (0..width).map(|o| bilinear_taps(o, width, src.width)).collect();
    let mut out = DepthMap::new(width, height);
    for oy in 0..height {
        let (y0, y1, wy0, wy1) = bilinear_taps(oy, height, src.height);
        for (ox, &(x0, x1, wx0, wx1)) in xtaps.iter().enumerate() {
            let top = wx0 * src.get(x0, y0) + wx1 * src.get(x1, y0);
            let bottom = wx0 * src.get(x0, y1) + wx1 * src.get(x1, y1);
            out.set(ox, oy, wy0 * top + wy1 * bottom);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_keeps_constants() {
        let src = DepthMap::filled(3, 5, 7.25);
        let out = resize_bilinear(&src, 11, 4);
        assert!(out.data.iter().all(|&v| (v - 7.25).abs() < 1e-12));
    }

    #[test]
    fn flips_are_involutions() {
        let rgb = RgbImage::from_vec(2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(rgb.flip_horizontal().pixel(0, 0), [0.4, 0.5, 0.6]);
        assert_eq!(rgb.flip_horizontal().flip_horizontal(), rgb);
    }

    #[test]
    fn gray_uses_luma_weights() {
        let rgb = RgbImage::from_vec(1, 1, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((rgb.to_gray().data[0] - 0.299).abs() < 1e-9);
    }
}
