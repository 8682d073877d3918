//! Planar floating-point images in the canonical [-1, 1] range.
//!
//! Every image that flows through the system is an [`ImagePlane`]: channel-major
//! (CHW) f32 data. RGB images live in [-1, 1], which pairs with the tanh output
//! of the generator; 8-bit PNG is the only interchange format.

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::noise::NoiseField;

/// Allowed overshoot of the canonical range before `save` refuses; clamping
/// beyond this must be done explicitly upstream.
pub const SAVE_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Decode an 8-bit RGB image file into canonical range.
    ///
    /// Alpha channels are stripped with a warning; other channel layouts are
    /// rejected.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::ImageRead {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = match img {
            image::DynamicImage::ImageRgb8(rgb) => rgb,
            image::DynamicImage::ImageRgba8(rgba) => {
                eprintln!(
                    "warning: {} has an alpha channel, stripping it",
                    path.display()
                );
                image::DynamicImage::ImageRgba8(rgba).to_rgb8()
            }
            other => {
                return Err(Error::NotRgb {
                    path: path.to_path_buf(),
                    channels: other.color().channel_count() as usize,
                })
            }
        };
        Ok(Self::from_rgb8(&rgb))
    }

    /// Like [`ImagePlane::load`] but accepts grayscale input by replicating the
    /// single channel, for guiding images in texture transfer.
    pub fn load_guide(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::ImageRead {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn from_rgb8(rgb: &image::RgbImage) -> Self {
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut out = Self::new(3, h, w);
        for (x, y, p) in rgb.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, p.0[c] as f32 / 127.5 - 1.0);
            }
        }
        out
    }

    fn to_rgb8(&self) -> Result<image::RgbImage> {
        if self.channels != 3 {
            return Err(Error::DimensionMismatch(format!(
                "save expects a 3-channel image, got {} channels",
                self.channels
            )));
        }
        for &v in &self.data {
            if !v.is_finite() || v < -1.0 - SAVE_TOLERANCE || v > 1.0 + SAVE_TOLERANCE {
                return Err(Error::OutOfRange {
                    value: v,
                    tolerance: SAVE_TOLERANCE,
                });
            }
        }
        let mut rgb = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut p = [0u8; 3];
                for c in 0..3 {
                    let v = self.get(c, y, x).clamp(-1.0, 1.0);
                    p[c] = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
                }
                rgb.put_pixel(x as u32, y as u32, image::Rgb(p));
            }
        }
        Ok(rgb)
    }

    /// Write as 8-bit RGB PNG. Values outside the canonical range (beyond
    /// [`SAVE_TOLERANCE`]) are an error.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let rgb = self.to_rgb8()?;
        rgb.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::ImageWrite {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Per-pixel `self + amplitude * noise`, clamped to [-1, 1]. The noise field
    /// is applied identically to every channel.
    pub fn add_noise(&self, noise: &NoiseField, amplitude: f32) -> Result<ImagePlane> {
        if noise.height() != self.height || noise.width() != self.width {
            return Err(Error::DimensionMismatch(format!(
                "noise field {}x{} does not match image {}x{}",
                noise.height(),
                noise.width(),
                self.height,
                self.width
            )));
        }
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    let v = self.get(c, y, x) + amplitude * noise.get(y, x);
                    out.set(c, y, x, v.clamp(-1.0, 1.0));
                }
            }
        }
        Ok(out)
    }

    /// As an NCHW tensor with batch dimension 1.
    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(
            &self.data,
            (1, self.channels, self.height, self.width),
            device,
        )?;
        Ok(t.to_dtype(dtype)?)
    }

    /// From an NCHW tensor with batch dimension 1 (or a CHW tensor).
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.dims() {
            [1, _, _, _] => t.squeeze(0)?,
            [_, _, _] => t.clone(),
            dims => {
                return Err(Error::DimensionMismatch(format!(
                    "expected (1,C,H,W) or (C,H,W) tensor, got {dims:?}"
                )))
            }
        };
        let (c, h, w) = t.dims3()?;
        let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Self::from_data(c, h, w, data)
    }

    pub fn min_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn max_abs_diff(&self, other: &ImagePlane) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// SHA-256 over dimensions and raw pixel bytes.
    pub fn fingerprint(&self) -> String {
        use sha2::Digest;
        let mut h = sha2::Sha256::new();
        h.update((self.channels as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
