use std::path::Path;

use crate::{Error, Result};

/// Linear RGB image, `f64` per channel, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Box-filters `r × r` blocks; trailing rows/columns that do not fill a
    /// block are dropped, matching [`crate::Camera::downsampled`].
    pub fn downsample(&self, r: usize) -> Image {
        assert!(r >= 1);
        if r == 1 {
            return self.clone();
        }
        let w = (self.width / r).max(1);
        let h = (self.height / r).max(1);
        let bw = r.min(self.width);
        let bh = r.min(self.height);
        let norm = 1.0 / (bw * bh) as f64;
        Image::from_fn(w, h, |x, y| {
            let mut acc = [0.0; 3];
            for dy in 0..bh {
                for dx in 0..bw {
                    let p = self.pixel(x * r + dx, y * r + dy);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                }
            }
            acc.map(|v| v * norm)
        })
    }

    pub fn mse(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other));
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        sum / self.data.len() as f64
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Image> {
        if bytes.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{} bytes cannot hold a {width}x{height} RGB image",
                bytes.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }

    /// Reads an 8-bit RGB PNG or PPM (format chosen by content).
    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Image::from_rgb8(w as usize, h as usize, img.as_raw())
    }

    /// Writes 8-bit RGB; the extension (`.png` / `.ppm`) picks the format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer size matches dimensions");
        buf.save(path)?;
        Ok(())
    }
}
