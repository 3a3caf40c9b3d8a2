//! Core raster types and the low-level kernels every later stage builds on.
//!
//! Intensities stay real-valued ([`Field`], [`GrayImage`]) between stages and
//! are quantized to 8 bits only when written to disk. Every neighbourhood
//! operation uses edge replication at the image border.

mod filter;
pub mod io;
mod morph;
mod stats;

pub use filter::{bilateral_filter, convolve, gaussian_blur, gaussian_kernel, to_grayscale, Kernel};
pub use morph::{
    connected_components, distance_transform, morphology, Connectivity, DistanceMetric, MorphOp,
};
pub use stats::{histogram, mean_variance, otsu_binarize, otsu_threshold, Histogram};

use crate::error::{Error, Result};

/// A real-valued 2-D raster with no range restriction (filter responses,
/// distance fields, gradient components).
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::dims(format!("raster must be at least 1x1, got {width}x{height}")));
    }
    Ok(())
}

impl Field {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self { width, height, data: vec![value; width * height] })
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::dims(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    /// Bilinear sample at a real-valued position (pixel centres at integers),
    /// replicating the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as isize;
        let y0 = y.floor() as isize;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let a = self.get_clamped(x0, y0);
        let b = self.get_clamped(x0 + 1, y0);
        let c = self.get_clamped(x0, y0 + 1);
        let d = self.get_clamped(x0 + 1, y0 + 1);
        a * (1.0 - fx) * (1.0 - fy) + b * fx * (1.0 - fy) + c * (1.0 - fx) * fy + d * fx * fy
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn same_dims<T: Dimensions>(&self, other: &T) -> bool {
        self.width == other.width() && self.height == other.height()
    }

    /// Clip into [0,255] to materialize an intensity image.
    pub fn to_gray_clipped(&self) -> GrayImage {
        GrayImage(self.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 255.0) }))
    }
}

/// Anything with a width and a height.
pub trait Dimensions {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
}

impl Dimensions for Field {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

impl Dimensions for GrayImage {
    fn width(&self) -> usize {
        self.0.width
    }
    fn height(&self) -> usize {
        self.0.height
    }
}

impl Dimensions for Mask {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

pub(crate) fn ensure_same_dims(a: &impl Dimensions, b: &impl Dimensions) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::dims(format!(
            "dimension mismatch: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Intensity image with every value in [0,255].
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage(Field);

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Ok(Self(Field::new(width, height)?))
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        check_intensity(value)?;
        Ok(Self(Field::filled(width, height, value)?))
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        for &v in &data {
            check_intensity(v)?;
        }
        Ok(Self(Field::from_vec(width, height, data)?))
    }

    pub fn from_u8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        Ok(Self(Field::from_vec(width, height, data.iter().map(|&v| f64::from(v)).collect())?))
    }

    /// Build from a closure; values are clipped into [0,255].
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Ok(Field::from_fn(width, height, f)?.to_gray_clipped())
    }

    pub fn field(&self) -> &Field {
        &self.0
    }

    pub fn into_field(self) -> Field {
        self.0
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.0.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    /// Multiply every intensity by `factor` and clip.
    pub fn scaled(&self, factor: f64) -> GrayImage {
        self.0.map(|v| v * factor).to_gray_clipped()
    }

    /// Round-to-nearest 8-bit quantization, used at I/O boundaries.
    pub fn to_u8(&self) -> Vec<u8> {
        self.0.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()
    }
}

fn check_intensity(v: f64) -> Result<()> {
    if !(0.0..=255.0).contains(&v) {
        return Err(Error::param(format!("intensity {v} outside [0,255]")));
    }
    Ok(())
}

/// Binary raster holding only 0 and 255.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self { width, height, data: vec![0; width * height] })
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self { width, height, data: vec![255; width * height] })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(if f(x, y) { 255 } else { 0 });
            }
        }
        Ok(Self { width, height, data })
    }

    /// Accepts raw bytes; only 0 and 255 are valid.
    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::dims(format!("mask data length {} != {width}x{height}", data.len())));
        }
        if let Some(v) = data.iter().find(|&&v| v != 0 && v != 255) {
            return Err(Error::param(format!("mask value {v} is not 0 or 255")));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_bools(width: usize, height: usize, bits: &[bool]) -> Result<Self> {
        Self::from_raw(width, height, bits.iter().map(|&b| if b { 255 } else { 0 }).collect())
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn get_index(&self, idx: usize) -> bool {
        self.data[idx] != 0
    }

    /// Out-of-range reads return `false`.
    #[inline]
    pub fn get_or_false(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = if on { 255 } else { 0 };
    }

    #[inline]
    pub fn set_index(&mut self, idx: usize, on: bool) {
        self.data[idx] = if on { 255 } else { 0 };
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask> {
        ensure_same_dims(self, other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| if f(a != 0, b != 0) { 255 } else { 0 })
            .collect();
        Ok(Mask { width: self.width, height: self.height, data })
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && b)
    }

    /// Pixels in `self` but not in `other`.
    pub fn difference(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn inverted(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 255 - v).collect(),
        }
    }

    /// True when every 255 pixel of `self` is also 255 in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.data.iter().zip(&other.data).all(|(&a, &b)| a == 0 || b != 0)
    }

    /// Intersection over union; two empty masks have IoU 1.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        ensure_same_dims(self, other)?;
        let (mut inter, mut uni) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let (a, b) = (a != 0, b != 0);
            inter += usize::from(a && b);
            uni += usize::from(a || b);
        }
        Ok(if uni == 0 { 1.0 } else { inter as f64 / uni as f64 })
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage(Field {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        })
    }

    /// Foreground pixels that have a 4-neighbour outside the mask (or lie on
    /// the image border).
    pub fn inner_boundary(&self) -> Mask {
        let (w, h) = (self.width as isize, self.height as isize);
        let mut out = Mask { width: self.width, height: self.height, data: vec![0; self.data.len()] };
        for y in 0..h {
            for x in 0..w {
                if !self.get(x as usize, y as usize) {
                    continue;
                }
                let edge = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .any(|&(dx, dy)| !self.get_or_false(x + dx, y + dy));
                if edge {
                    out.set(x as usize, y as usize, true);
                }
            }
        }
        out
    }
}
