//! RGB raster type and the pixel-level utilities shared by the rest of the crate.
//!
//! Pixels are stored row-major as `f64` sRGB values in `[0, 1]`, three
//! channels per pixel. Every operation here is deterministic.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Build an image from row-major RGB data.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        let expected = height * width * CHANNELS;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Argument(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Build an image from data that is already known to be in range.
    /// Values are clamped to `[0, 1]`; NaN becomes 0.
    pub(crate) fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * CHANNELS);
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    /// Build an image by evaluating `f(row, col)` at every pixel. Output is clamped.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Ok(Self::from_clamped(height, width, data))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * CHANNELS + channel]
    }

    #[inline]
    pub fn rgb(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Apply `f` to every channel value; the result is clamped to `[0, 1]`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Image {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::from_clamped(self.height, self.width, data)
    }

    /// Apply `f` to every pixel triple; the result is clamped to `[0, 1]`.
    pub fn map_pixels(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Image {
        let data = self
            .data
            .chunks_exact(CHANNELS)
            .flat_map(|p| f([p[0], p[1], p[2]]))
            .collect();
        Self::from_clamped(self.height, self.width, data)
    }

    /// Per-channel means over all pixels.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut sums = [0.0; 3];
        for p in self.data.chunks_exact(CHANNELS) {
            for c in 0..CHANNELS {
                sums[c] += p[c];
            }
        }
        let n = (self.height * self.width) as f64;
        sums.map(|s| s / n)
    }

    /// Mean absolute difference over all channel values.
    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::DimensionMismatch {
                expected: self.height * self.width,
                actual: other.height * other.width,
            });
        }
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(total / self.data.len() as f64)
    }

    /// Replace every pixel whose center lies outside the inscribed disk of
    /// radius `min(H, W) / 2 - margin` with `fill`.
    pub fn mask_outside_disk(&self, margin: f64, fill: [f64; 3]) -> Image {
        let (cy, cx) = self.center();
        let radius = self.height.min(self.width) as f64 / 2.0 - margin;
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                if dx * dx + dy * dy > radius * radius {
                    let i = (y * self.width + x) * CHANNELS;
                    out.data[i..i + CHANNELS].copy_from_slice(&fill);
                }
            }
        }
        out
    }

    /// Crop to the largest centered square that fits inside the inscribed
    /// disk. Rotations about the center never move fill color into it.
    pub fn crop_inscribed_square(&self) -> Image {
        let diameter = self.height.min(self.width) as f64;
        let side = ((diameter / std::f64::consts::SQRT_2).floor() as usize).max(1);
        let top = (self.height - side) / 2;
        let left = (self.width - side) / 2;
        let mut data = Vec::with_capacity(side * side * CHANNELS);
        for y in top..top + side {
            let start = (y * self.width + left) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + side * CHANNELS]);
        }
        Image {
            height: side,
            width: side,
            data,
        }
    }

    /// Geometric center in pixel-index coordinates `(row, col)`.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.height as f64 - 1.0) / 2.0,
            (self.width as f64 - 1.0) / 2.0,
        )
    }

    /// Encode as an 8-bit RGB PNG.
    pub fn to_png_bytes(&self) -> Vec<u8> {
        let raw: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        let buffer = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions");
        let mut bytes = Vec::new();
        DynamicImage::ImageRgb8(buffer)
            .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        bytes
    }

    /// Decode PNG bytes. `origin` is only used in error messages.
    pub fn from_png_bytes(bytes: &[u8], origin: &Path) -> Result<Image> {
        let reader = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png);
        let decoded = reader.decode().map_err(|e| Error::Format {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?;
        from_dynamic(decoded, origin)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn from_dynamic(decoded: DynamicImage, origin: &Path) -> Result<Image> {
    let height = decoded.height() as usize;
    let width = decoded.width() as usize;
    let composite = |rgba: [f64; 4]| -> [f64; 3] {
        let a = rgba[3];
        [0, 1, 2].map(|c| a * rgba[c] + (1.0 - a))
    };
    let data: Vec<f64> = match decoded {
        DynamicImage::ImageRgb8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageRgb16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        DynamicImage::ImageRgba8(buf) => buf
            .pixels()
            .flat_map(|p| composite(p.0.map(|v| v as f64 / 255.0)))
            .collect(),
        DynamicImage::ImageRgba16(buf) => buf
            .pixels()
            .flat_map(|p| composite(p.0.map(|v| v as f64 / 65535.0)))
            .collect(),
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => decoded
            .to_rgba8()
            .pixels()
            .flat_map(|p| composite(p.0.map(|v| v as f64 / 255.0)))
            .collect(),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => decoded
            .to_rgba16()
            .pixels()
            .flat_map(|p| composite(p.0.map(|v| v as f64 / 65535.0)))
            .collect(),
        other => {
            return Err(Error::Format {
                path: origin.to_path_buf(),
                detail: format!("unsupported pixel layout {:?}", other.color()),
            })
        }
    };
    Ok(Image::from_clamped(height, width, data))
}

/// Load an 8- or 16-bit PNG. Alpha is composited over white.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: "missing PNG signature".into(),
        });
    }
    Image::from_png_bytes(&bytes, path)
}

/// Save as an 8-bit RGB PNG.
pub fn save_png(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, image.to_png_bytes()).map_err(|e| Error::io(path, e))
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(image: &Image, new_h: usize, new_w: usize) -> Result<Image> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::Argument(format!(
            "resize target must be positive, got {new_h}x{new_w}"
        )));
    }
    if new_h == image.height && new_w == image.width {
        return Ok(image.clone());
    }
    let axis = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        let scale = src_len as f64 / dst_len as f64;
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut data = Vec::with_capacity(new_h * new_w * CHANNELS);
    for y in 0..new_h {
        let (y0, y1, fy) = axis(y, image.height, new_h);
        for x in 0..new_w {
            let (x0, x1, fx) = axis(x, image.width, new_w);
            for c in 0..CHANNELS {
                let top = image.get(y0, x0, c) * (1.0 - fx) + image.get(y0, x1, c) * fx;
                let bottom = image.get(y1, x0, c) * (1.0 - fx) + image.get(y1, x1, c) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(Image::from_clamped(new_h, new_w, data))
}

/// An image with its ground-truth class and a stable identifier.
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub id: String,
    pub label: usize,
    pub image: Image,
}

/// One row of a `id,path,label` manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub label: usize,
}
