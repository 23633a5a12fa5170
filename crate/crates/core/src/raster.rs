//! Planar float images and their 8-bit PNG encoding.

use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma, Rgb};

use crate::numerics::{Scalar, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("image data length {len} does not match {channels}×{height}×{width}")]
    Shape {
        channels: usize,
        height: usize,
        width: usize,
        len: usize,
    },
    #[error("pixel value {0} outside [0, 1]")]
    OutOfRange(f32),
    #[error("{0}")]
    Codec(#[from] image::ImageError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Channel-major (CHW) image with samples nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if channels * height * width != data.len() || channels == 0 || height == 0 || width == 0 {
            return Err(RasterError::Shape {
                channels,
                height,
                width,
                len: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.pixels()..(c + 1) * self.pixels()]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(
            (self.channels, self.height, self.width),
            (other.channels, other.height, other.width)
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn check_unit_range(&self) -> Result<(), RasterError> {
        match self.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            Some(&v) => Err(RasterError::OutOfRange(v)),
            None => Ok(()),
        }
    }

    /// Luminance with weights (0.299, 0.587, 0.114); single-channel input is returned as is.
    pub fn gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.pixels();
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = (0..n).map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).collect();
        Image {
            channels: 1,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    /// Box-filter reduction by an integer factor dividing both sides.
    pub fn downsample(&self, factor: usize) -> Result<Image, RasterError> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(RasterError::Shape {
                channels: self.channels,
                height: self.height,
                width: self.width,
                len: factor,
            });
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let mut out = Image::filled(self.channels, h, w, 0.0);
        let norm = (factor * factor) as f32;
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += self.get(c, y * factor + dy, x * factor + dx);
                        }
                    }
                    out.set(c, y, x, acc / norm);
                }
            }
        }
        Ok(out)
    }

    /// Round every sample to the nearest 8-bit level.
    pub fn quantized(&self) -> Image {
        Image {
            data: self.data.iter().map(|&v| to_u8(v) as f32 / 255.0).collect(),
            ..self.clone()
        }
    }

    /// Map `[0, 1]` samples to `[-1, 1]`.
    pub fn to_signed_tensor<S: Scalar>(&self) -> Tensor<S> {
        Tensor::new(
            vec![self.channels, self.height, self.width],
            self.data.iter().map(|&v| S::of(2.0 * v as f64 - 1.0)).collect(),
        )
        .expect("image shape is valid")
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        Tensor::new(
            vec![self.channels, self.height, self.width],
            self.data.iter().map(|&v| S::of(v as f64)).collect(),
        )
        .expect("image shape is valid")
    }

    /// Inverse of [`Image::to_signed_tensor`], clamped to `[0, 1]`.
    pub fn from_signed_tensor<S: Scalar>(t: &Tensor<S>) -> Result<Image, RasterError> {
        let s = t.shape();
        let (c, h, w) = match s.len() {
            3 => (s[0], s[1], s[2]),
            4 if s[0] == 1 => (s[1], s[2], s[3]),
            _ => {
                return Err(RasterError::Shape {
                    channels: 0,
                    height: 0,
                    width: 0,
                    len: t.len(),
                })
            }
        };
        let data = t
            .data()
            .iter()
            .map(|&v| ((v.as_f64() + 1.0) * 0.5).clamp(0.0, 1.0) as f32)
            .collect();
        Image::new(c, h, w, data)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, RasterError> {
        let mut out = Cursor::new(Vec::new());
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => {
                let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                    ImageBuffer::from_raw(w, h, self.data.iter().map(|&v| to_u8(v)).collect())
                        .expect("buffer size");
                buf.write_to(&mut out, ImageFormat::Png)?;
            }
            3 => {
                let n = self.pixels();
                let mut raw = Vec::with_capacity(3 * n);
                for i in 0..n {
                    for c in 0..3 {
                        raw.push(to_u8(self.data[c * n + i]));
                    }
                }
                let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(w, h, raw).expect("buffer size");
                buf.write_to(&mut out, ImageFormat::Png)?;
            }
            c => {
                return Err(RasterError::Shape {
                    channels: c,
                    height: self.height,
                    width: self.width,
                    len: self.data.len(),
                })
            }
        }
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    /// Decodes an 8-bit PNG as RGB, or as one channel when `gray` is set.
    pub fn load_png(path: &Path, gray: bool) -> Result<Image, RasterError> {
        let img = image::open(path)?;
        if gray {
            let buf = img.to_luma8();
            let (w, h) = buf.dimensions();
            let data = buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            Image::new(1, h as usize, w as usize, data)
        } else {
            let buf = img.to_rgb8();
            let (w, h) = buf.dimensions();
            let n = (w * h) as usize;
            let raw = buf.into_raw();
            let mut data = vec![0.0; 3 * n];
            for i in 0..n {
                for c in 0..3 {
                    data[c * n + i] = raw[3 * i + c] as f32 / 255.0;
                }
            }
            Image::new(3, h as usize, w as usize, data)
        }
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_of_quantized_image_is_exact() {
        let data: Vec<f32> = (0..3 * 6 * 5).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
        let img = Image::new(3, 6, 5, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p, false).unwrap(), img);
    }

    #[test]
    fn signed_tensor_round_trip() {
        let img = Image::new(3, 2, 2, vec![0.0, 0.25, 0.5, 1.0, 0.1, 0.2, 0.3, 0.4, 0.9, 0.8, 0.7, 0.6]).unwrap();
        let t = img.to_signed_tensor::<f64>();
        let back = Image::from_signed_tensor(&t).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn gray_uses_luma_weights() {
        let img = Image::new(3, 1, 1, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((img.gray().data()[0] - 0.299).abs() < 1e-7);
    }
}
