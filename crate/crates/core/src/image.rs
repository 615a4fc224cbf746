//! Dense H×W×3 images with interleaved RGB storage.

use crate::error::{Error, Result};

/// Per-channel first and second moments used for input normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    /// Identity statistics: normalization with these is a no-op.
    pub fn identity() -> Self {
        ChannelStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

/// Real-valued RGB image, row-major, channels interleaved per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(h: usize, w: usize) -> Self {
        Image {
            h,
            w,
            data: vec![0.0; h * w * 3],
        }
    }

    pub fn from_data(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * 3 {
            return Err(Error::config(format!(
                "image data length {} does not match {h}x{w}x3",
                data.len()
            )));
        }
        Ok(Image { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.w + col) * 3 + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.w + col) * 3 + ch] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// One pixel as an RGB triple.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let base = (row * self.w + col) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let base = (row * self.w + col) * 3;
        self.data[base..base + 3].copy_from_slice(&rgb);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Quantize to 8-bit the way a maxval-255 binary pixmap stores pixels.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Inverse of [`Image::to_bytes`]: bytes back to floats in [0, 1].
    pub fn from_bytes(h: usize, w: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != h * w * 3 {
            return Err(Error::data(format!(
                "pixel byte length {} does not match {h}x{w}x3",
                bytes.len()
            )));
        }
        Ok(Image {
            h,
            w,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }
}
