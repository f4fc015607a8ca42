//! Dense channel-major tensors and the validated image type.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use crate::error::{CoreError, CoreResult};

/// A dense `C x H x W` tensor of `f64`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn filled(c: usize, h: usize, w: usize, value: f64) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![value; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> CoreResult<Self> {
        if data.len() != c * h * w {
            return Err(CoreError::ShapeMismatch(format!(
                "expected {} elements for {}x{}x{}, got {}",
                c * h * w,
                c,
                h,
                w,
                data.len()
            )));
        }
        Ok(Tensor { c, h, w, data })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// One channel as a contiguous plane.
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn check_same_shape(&self, other: &Tensor, what: &str) -> CoreResult<()> {
        if !self.same_shape(other) {
            return Err(CoreError::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert!(self.same_shape(other));
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Spatial crop shared by all channels.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Tensor {
        assert!(y0 + h <= self.h && x0 + w <= self.w, "crop out of bounds");
        let mut out = Tensor::zeros(self.c, h, w);
        for c in 0..self.c {
            for y in 0..h {
                for x in 0..w {
                    let v = self.get(c, y0 + y, x0 + x);
                    out.set(c, y, x, v);
                }
            }
        }
        out
    }

    /// Bilinear resize to `nh x nw` (all channels).
    pub fn resize_bilinear(&self, nh: usize, nw: usize) -> Tensor {
        assert!(nh >= 1 && nw >= 1);
        let mut out = Tensor::zeros(self.c, nh, nw);
        let sy = if nh > 1 {
            (self.h - 1) as f64 / (nh - 1) as f64
        } else {
            0.0
        };
        let sx = if nw > 1 {
            (self.w - 1) as f64 / (nw - 1) as f64
        } else {
            0.0
        };
        for c in 0..self.c {
            for y in 0..nh {
                let fy = y as f64 * sy;
                let y0 = fy as usize;
                let y1 = (y0 + 1).min(self.h - 1);
                let ty = fy - y0 as f64;
                for x in 0..nw {
                    let fx = x as f64 * sx;
                    let x0 = fx as usize;
                    let x1 = (x0 + 1).min(self.w - 1);
                    let tx = fx - x0 as f64;
                    let v = (1.0 - ty) * ((1.0 - tx) * self.get(c, y0, x0) + tx * self.get(c, y0, x1))
                        + ty * ((1.0 - tx) * self.get(c, y1, x0) + tx * self.get(c, y1, x1));
                    out.set(c, y, x, v);
                }
            }
        }
        out
    }
}

/// An image: a tensor with 1 or 3 channels and all values in `[0, 1]`.
///
/// The pixel domain is `[0, 1]` everywhere in this workspace; consumers that
/// conventionally assume `[0, 255]` (the evaluation metrics) rescale
/// internally.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(Tensor);

impl Image {
    /// Validate and wrap a tensor as an image.
    pub fn new(t: Tensor) -> CoreResult<Self> {
        if t.channels() != 1 && t.channels() != 3 {
            return Err(CoreError::InvalidImage(format!(
                "expected 1 or 3 channels, got {}",
                t.channels()
            )));
        }
        if t.height() < 1 || t.width() < 1 {
            return Err(CoreError::InvalidImage("empty image".into()));
        }
        if !t.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(CoreError::InvalidImage(
                "pixel values outside [0, 1]".into(),
            ));
        }
        Ok(Image(t))
    }

    /// Wrap a tensor, clamping values into `[0, 1]`.
    pub fn clamped(mut t: Tensor) -> CoreResult<Self> {
        for v in t.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Image::new(t)
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

impl Deref for Image {
    type Target = Tensor;
    fn deref(&self) -> &Tensor {
        &self.0
    }
}

impl DerefMut for Image {
    fn deref_mut(&mut self) -> &mut Tensor {
        &mut self.0
    }
}

/// Luminance plane of an image (`0.299 R + 0.587 G + 0.114 B`), in the same
/// `[0, 1]` domain. Single-channel images pass through unchanged.
pub fn luminance(img: &Tensor) -> Vec<f64> {
    let n = img.height() * img.width();
    if img.channels() == 1 {
        return img.plane(0).to_vec();
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
    }
    out
}
