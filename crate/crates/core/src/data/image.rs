//! In-memory image types: 8-bit inputs and float HDR targets.
//!
//! Both store pixels in planar `[3, H, W]` order. The 8-bit image keeps
//! its integer identity (quantization is part of its meaning); the HDR
//! image is a float array normalized so the 16-bit file range maps to
//! [0, 1].

use std::path::Path;

use crate::data::png_io::{self, DecodedImage};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::shape::Shape;
use crate::tensor::Tensor;

/// 8-bit RGB input image.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LdrImage {
    data: Vec<u8>,
    h: usize,
    w: usize,
}

impl LdrImage {
    pub fn from_planar(data: Vec<u8>, h: usize, w: usize) -> Result<LdrImage> {
        if data.len() != 3 * h * w || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "LDR data of length {} does not match 3x{h}x{w}",
                data.len()
            )));
        }
        Ok(LdrImage { data, h, w })
    }

    pub fn load(path: &Path) -> Result<LdrImage> {
        match png_io::load_rgb(path)? {
            DecodedImage::Rgb8 { data, h, w } => Ok(LdrImage { data, h, w }),
            DecodedImage::Rgb16 { .. } => Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                reason: "expected an 8-bit image, found 16-bit".into(),
            }),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        png_io::save_rgb8(path, &self.data, self.h, self.w)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    /// Pixels as floats in [0, 1] (`value / 255`).
    pub fn float_view(&self) -> Vec<f32> {
        self.data.iter().map(|&b| b as f32 / 255.0).collect()
    }

    /// `(1, 3, H, W)` tensor of the float view.
    pub fn to_tensor<E: Element>(&self) -> Tensor<E> {
        let data = self
            .data
            .iter()
            .map(|&b| E::from_f64(b as f64 / 255.0))
            .collect();
        Tensor::from_parts(Shape::new(1, 3, self.h, self.w), data)
    }
}

/// Float HDR image; file values are 16-bit and map to [0, 1].
#[derive(Clone, PartialEq, Debug)]
pub struct HdrImage {
    data: Vec<f32>,
    h: usize,
    w: usize,
}

impl HdrImage {
    pub fn from_planar(data: Vec<f32>, h: usize, w: usize) -> Result<HdrImage> {
        if data.len() != 3 * h * w || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "HDR data of length {} does not match 3x{h}x{w}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::degenerate(
                "HDR pixels must be finite and nonnegative",
            ));
        }
        Ok(HdrImage { data, h, w })
    }

    pub fn load(path: &Path) -> Result<HdrImage> {
        match png_io::load_rgb(path)? {
            DecodedImage::Rgb16 { data, h, w } => Ok(HdrImage {
                data: data.iter().map(|&v| v as f32 / 65535.0).collect(),
                h,
                w,
            }),
            DecodedImage::Rgb8 { .. } => Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                reason: "expected a 16-bit image, found 8-bit".into(),
            }),
        }
    }

    /// Writes a 16-bit file; values are clamped to [0, 1] and rounded
    /// to the file lattice.
    pub fn save(&self, path: &Path) -> Result<()> {
        let encoded: Vec<u16> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        png_io::save_rgb16(path, &encoded, self.h, self.w)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// `(1, 3, H, W)` tensor.
    pub fn to_tensor<E: Element>(&self) -> Tensor<E> {
        let data = self.data.iter().map(|&v| E::from_f64(v as f64)).collect();
        Tensor::from_parts(Shape::new(1, 3, self.h, self.w), data)
    }

    /// Rebuilds an image from a single-batch `(1, 3, H, W)` tensor.
    pub fn from_tensor<E: Element>(t: &Tensor<E>) -> Result<HdrImage> {
        let s = t.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::shape(format!(
                "expected a (1, 3, H, W) tensor, got {s}"
            )));
        }
        let data = t
            .data()
            .iter()
            .map(|&v| (v.to_f64().max(0.0)) as f32)
            .collect();
        HdrImage::from_planar(data, s.h, s.w)
    }
}
