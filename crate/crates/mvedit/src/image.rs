//! Flat RGB image buffer used across the whole pipeline.
//!
//! Values are stored as f64 in row-major, channel-interleaved order. Scene
//! content lives in [0, 1]; intermediate diffusion states and gradients use
//! the same type without the range restriction, so the range is checked at
//! the scene/IO boundaries rather than in the constructor.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Image { height, width, data: vec![0.0; height * width * CHANNELS] }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        let mut img = Image::zeros(height, width);
        img.data.fill(value);
        img
    }

    /// Builds an image from a per-pixel function of (x, y) returning RGB.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Image::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                img.put(x, y, f(x, y));
            }
        }
        img
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width * CHANNELS, "raw buffer length mismatch");
        Image { height, width, data }
    }

    /// Image-shaped standard normal draw, consuming rng in fixed pixel order.
    pub fn standard_normal(height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let mut img = Image::zeros(height, width);
        for v in img.data.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    #[inline]
    fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y * self.width + x) * CHANNELS
    }

    /// Pixel at column x, row y; origin is the top-left corner.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = self.idx(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = self.idx(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn add_at(&mut self, x: usize, y: usize, rgb: [f64; 3], scale: f64) {
        let i = self.idx(x, y);
        self.data[i] += scale * rgb[0];
        self.data[i + 1] += scale * rgb[1];
        self.data[i + 2] += scale * rgb[2];
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        assert!(self.same_shape(other), "shape mismatch");
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// self += scale * other
    pub fn axpy(&mut self, scale: f64, other: &Image) {
        assert!(self.same_shape(other), "shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale_in_place(&mut self, scale: f64) {
        for v in self.data.iter_mut() {
            *v *= scale;
        }
    }

    pub fn dot(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        sum / self.data.len() as f64
    }

    /// Bilinear sample at continuous coordinates; coordinates are clamped to
    /// [0, w-1] x [0, h-1] and neighbor lookups clamp at the borders, so the
    /// result is always a convex combination of stored pixels.
    pub fn bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = (1.0 - fy) * ((1.0 - fx) * p00[c] + fx * p10[c])
                + fy * ((1.0 - fx) * p01[c] + fx * p11[c]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    pub fn clamp_unit(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Writes an 8-bit RGB PNG; values are clamped and quantized by round(v*255).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len());
        for &v in &self.data {
            bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes)
                .expect("buffer length matches dimensions");
        buf.save(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::io(path, std::io::Error::other(other)),
        })
    }

    /// Reads an 8-bit RGB PNG back into [0, 1] by dividing by 255.
    pub fn load_png(path: &Path) -> Result<Image> {
        let dynamic = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::io(path, std::io::Error::other(other)),
        })?;
        let rgb = dynamic.into_rgb8();
        let (width, height) = (rgb.width() as usize, rgb.height() as usize);
        let data = rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
        Ok(Image { height, width, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn pixel_addressing_is_column_row() {
        let mut img = Image::zeros(2, 3);
        img.put(2, 0, [0.1, 0.2, 0.3]);
        img.put(0, 1, [0.4, 0.5, 0.6]);
        assert_eq!(img.get(2, 0), [0.1, 0.2, 0.3]);
        assert_eq!(img.get(0, 1), [0.4, 0.5, 0.6]);
        // Row-major layout: (x=2, y=0) sits at flat index 2*3, (x=0, y=1) at 3*3.
        assert_eq!(img.data()[6], 0.1);
        assert_eq!(img.data()[9], 0.4);
    }

    #[test]
    fn png_round_trip_quantizes_to_one_over_255() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let img = Image::from_fn(9, 13, |_, _| {
            [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]
        });
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.height(), 9);
        assert_eq!(back.width(), 13);
        // Quantization error is at most half a step of 1/255.
        assert!(img.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-12);
        // A second round trip is exact: values are already on the 8-bit grid.
        back.save_png(&path).unwrap();
        let again = Image::load_png(&path).unwrap();
        assert_eq!(back, again);
    }

    #[test]
    fn axpy_and_dot_agree_with_reference() {
        let a = Image::from_raw(1, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Image::from_raw(1, 2, vec![0.5; 6]);
        let mut c = a.clone();
        c.axpy(2.0, &b);
        assert_eq!(c.data(), &[2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(a.dot(&b), 0.5 * 21.0);
    }
}
