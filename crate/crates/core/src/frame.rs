use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};

pub const DEFAULT_SIZE: usize = 32;
pub const DEFAULT_CHANNELS: usize = 3;

/// An H×W×C image with intensities in [0, 1], stored row-major (HWC).
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{channels} frame",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.channels]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    fn check_same_dims(&self, other: &Frame) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "frame dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn mean_abs_diff(&self, other: &Frame) -> Result<f64> {
        self.check_same_dims(other)?;
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum();
        Ok(s / self.data.len() as f64)
    }

    pub fn mse(&self, other: &Frame) -> Result<f64> {
        self.check_same_dims(other)?;
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = *a as f64 - *b as f64;
                d * d
            })
            .sum();
        Ok(s / self.data.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Frame) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .fold(0.0, f64::max))
    }

    /// Writes a 16-bit RGB PNG. Values are quantized to 1/65535.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::Shape(format!(
                "png export needs 3 channels, frame has {}",
                self.channels
            )));
        }
        let buf: Vec<u16> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        let img: ImageBuffer<Rgb<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, buf)
                .ok_or_else(|| Error::Shape("png buffer size".into()))?;
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.into_rgb16();
        let (w, h) = img.dimensions();
        let data = img
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 65535.0)
            .collect();
        Frame::from_vec(h as usize, w as usize, 3, data)
    }

    /// Frame with every value quantized the way `save_png` stores it.
    pub fn quantized(&self) -> Frame {
        let mut f = self.clone();
        for v in &mut f.data {
            *v = (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0;
        }
        f
    }

    /// Non-overlapping `patch`×`patch` blocks flattened patch-major, each
    /// block laid out as (dy, dx, c). Returns (num_patches, patch*patch*c).
    pub fn patches(&self, patch: usize) -> Result<(usize, usize, Vec<f32>)> {
        if patch == 0 || !self.height.is_multiple_of(patch) || !self.width.is_multiple_of(patch) {
            return Err(Error::Shape(format!(
                "patch size {patch} does not tile a {}x{} frame",
                self.height, self.width
            )));
        }
        let (ph, pw) = (self.height / patch, self.width / patch);
        let dim = patch * patch * self.channels;
        let mut out = Vec::with_capacity(ph * pw * dim);
        for py in 0..ph {
            for px in 0..pw {
                for dy in 0..patch {
                    let row = (py * patch + dy) * self.width;
                    let start = (row + px * patch) * self.channels;
                    out.extend_from_slice(&self.data[start..start + patch * self.channels]);
                }
            }
        }
        Ok((ph * pw, dim, out))
    }

    /// Inverse of [`Frame::patches`].
    pub fn from_patches(
        height: usize,
        width: usize,
        channels: usize,
        patch: usize,
        values: &[f32],
    ) -> Result<Self> {
        if values.len() != height * width * channels || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
            return Err(Error::Shape("patch layout does not match frame".into()));
        }
        let pw = width / patch;
        let dim = patch * patch * channels;
        let mut frame = Frame::zeros(height, width, channels);
        for (p, block) in values.chunks(dim).enumerate() {
            let (py, px) = (p / pw, p % pw);
            for dy in 0..patch {
                let row = (py * patch + dy) * width;
                let start = (row + px * patch) * channels;
                let src = &block[dy * patch * channels..(dy + 1) * patch * channels];
                frame.data[start..start + patch * channels].copy_from_slice(src);
            }
        }
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_round_trip() {
        let data: Vec<f32> = (0..32 * 32 * 3).map(|i| (i % 97) as f32 / 97.0).collect();
        let f = Frame::from_vec(32, 32, 3, data).unwrap();
        for patch in [4, 8] {
            let (n, dim, v) = f.patches(patch).unwrap();
            assert_eq!(n * dim, 32 * 32 * 3);
            let back = Frame::from_patches(32, 32, 3, patch, &v).unwrap();
            assert_eq!(back, f);
        }
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..8 * 8 * 3).map(|i| i as f32 / 191.0).collect();
        let f = Frame::from_vec(8, 8, 3, data).unwrap();
        let path = dir.path().join("f.png");
        f.save_png(&path).unwrap();
        let g = Frame::load_png(&path).unwrap();
        assert_eq!(g, f.quantized());
        assert!(g.max_abs_diff(&f).unwrap() <= 0.5 / 65535.0 + 1e-7);
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let a = Frame::zeros(4, 4, 3);
        let b = Frame::zeros(4, 8, 3);
        assert!(matches!(a.mse(&b), Err(Error::Shape(_))));
    }
}
