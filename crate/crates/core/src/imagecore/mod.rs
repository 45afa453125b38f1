//! Grayscale rasters, the [-1, 1] network representation, and classical
//! resampling.
//!
//! Pixels are stored as `f64` snapped to multiples of 2⁻⁵³. On that grid the
//! map `p ↦ 2p − 1` and its inverse are exact, so converting to the network
//! representation and back is bit-identical.

mod io;
mod resample;

pub use io::{load_png, save_png};
pub use resample::{
    degrade_reference, gaussian_blur, resample, resize, resize_plane, translate, KernelKind,
    ResampleKernel,
};

use semsr_tensorad::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Result};

const GRID: f64 = 9_007_199_254_740_992.0; // 2^53

/// Clamps to [0, 1] and rounds onto the 2⁻⁵³ grid.
pub fn snap(p: f64) -> f64 {
    (p.clamp(0.0, 1.0) * GRID).round() / GRID
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_code(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Row-major grayscale image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    bit_depth: BitDepth,
    pixel_size_nm: Option<f64>,
}

impl GrayImage {
    /// Rejects intensities outside [0, 1].
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(param(format!("intensity {p} outside [0, 1]")));
        }
        Self::from_clamped(width, height, pixels)
    }

    /// Clamps intensities into [0, 1]; only NaN is rejected.
    pub fn from_clamped(width: usize, height: usize, mut pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(param(format!(
                "image must be at least 1×1, got {width}×{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(shape(format!(
                "{width}×{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| p.is_nan()) {
            return Err(param("NaN intensity"));
        }
        for p in &mut pixels {
            *p = snap(*p);
        }
        Ok(Self {
            width,
            height,
            pixels,
            bit_depth: BitDepth::default(),
            pixel_size_nm: None,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Evaluates `f(x, y)` in row-major order; values are clamped.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::from_clamped(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    pub fn with_bit_depth(mut self, depth: BitDepth) -> Self {
        self.bit_depth = depth;
        self
    }

    pub fn pixel_size_nm(&self) -> Option<f64> {
        self.pixel_size_nm
    }

    pub fn with_pixel_size(mut self, nm: Option<f64>) -> Self {
        self.pixel_size_nm = nm;
        self
    }

    /// The `w`×`h` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(param(format!(
                "crop {w}×{h} at ({x}, {y}) exceeds {}×{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            pixels.extend_from_slice(&self.pixels[start..start + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            pixels,
            bit_depth: self.bit_depth,
            pixel_size_nm: self.pixel_size_nm,
        })
    }

    /// Pads by replicating edge pixels: `left`/`top` before, then out to
    /// `width`×`height`.
    pub fn pad_replicate(
        &self,
        left: usize,
        top: usize,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if width < self.width + left || height < self.height + top {
            return Err(param("padded size smaller than the image"));
        }
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = y.saturating_sub(top).min(self.height - 1);
            for x in 0..width {
                let sx = x.saturating_sub(left).min(self.width - 1);
                pixels.push(self.get(sx, sy));
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
            bit_depth: self.bit_depth,
            pixel_size_nm: self.pixel_size_nm,
        })
    }

    pub fn mean(&self) -> f64 {
        semsr_tensorad::kernels::pairwise_sum(&self.pixels) / self.pixels.len() as f64
    }
}

/// Channel-first network tensor, nominally 3 identical channels in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn from_parts(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape(format!(
                "{channels}×{height}×{width} tensor needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Takes item `n` of an `[N, C, H, W]` tensor.
    pub fn from_batch(t: &Tensor<f64>, n: usize) -> Result<Self> {
        let [bn, c, h, w] = t.dims4("image_tensor")?;
        if n >= bn {
            return Err(shape(format!("batch index {n} out of {bn}")));
        }
        let len = c * h * w;
        Self::from_parts(c, h, w, t.data()[n * len..(n + 1) * len].to_vec())
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// As a `[1, C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor<f64> {
        Tensor::new(
            &[1, self.channels, self.height, self.width],
            self.data.clone(),
        )
        .expect("length checked at construction")
    }
}

/// `p ↦ 2p − 1`, replicated over three channels.
pub fn to_normalized(img: &GrayImage) -> ImageTensor {
    let plane: Vec<f64> = img.pixels.iter().map(|&p| 2.0 * p - 1.0).collect();
    let mut data = Vec::with_capacity(plane.len() * 3);
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    ImageTensor {
        channels: 3,
        height: img.height,
        width: img.width,
        data,
    }
}

/// Channel mean mapped by `(v + 1) / 2` and clamped into [0, 1].
pub fn from_normalized(t: &ImageTensor) -> Result<GrayImage> {
    if t.channels != 3 {
        return Err(shape(format!("expected 3 channels, got {}", t.channels)));
    }
    let plane = t.height * t.width;
    let (r, rest) = t.data.split_at(plane);
    let (g, b) = rest.split_at(plane);
    let pixels = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&a, &b), &c)| {
            let v = if a == b && b == c {
                a
            } else {
                (a + b + c) / 3.0
            };
            (v + 1.0) / 2.0
        })
        .collect();
    GrayImage::from_clamped(t.width, t.height, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalization_endpoints() {
        let img = GrayImage::new(3, 1, vec![0.0, 1.0, 0.5]).unwrap();
        let t = to_normalized(&img);
        assert_eq!(t.channels(), 3);
        for c in 0..3 {
            assert_eq!(&t.data()[c * 3..c * 3 + 3], &[-1.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut px: Vec<f64> = (0..4096).map(|_| rng.random::<f64>()).collect();
        px.extend((0..=255).map(|k| k as f64 / 255.0));
        px.extend([1e-300, 1e-17, 0.1, 1.0 / 3.0]);
        let img = GrayImage::from_clamped(px.len(), 1, px).unwrap();
        let back = from_normalized(&to_normalized(&img)).unwrap();
        assert_eq!(back.pixels(), img.pixels());
    }

    #[test]
    fn from_normalized_clamps_and_averages() {
        let t = ImageTensor::from_parts(3, 1, 2, vec![3.0, -1.0, 3.0, 0.0, 3.0, 1.0]).unwrap();
        let img = from_normalized(&t).unwrap();
        assert_eq!(img.pixels(), &[1.0, 0.5]);
        let bad = ImageTensor::from_parts(1, 1, 1, vec![0.0]).unwrap();
        assert!(matches!(from_normalized(&bad), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn construction_checks() {
        assert!(GrayImage::new(2, 1, vec![0.0, 1.5]).is_err());
        assert!(GrayImage::new(0, 1, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        let img = GrayImage::from_fn(4, 3, |x, y| (x + 4 * y) as f64 / 11.0).unwrap();
        let c = img.crop(1, 1, 2, 2).unwrap();
        assert_eq!(
            c.pixels(),
            &[img.get(1, 1), img.get(2, 1), img.get(1, 2), img.get(2, 2)]
        );
        assert!(img.crop(3, 0, 2, 1).is_err());
    }

    #[test]
    fn replicate_padding() {
        let img = GrayImage::new(2, 1, vec![0.25, 0.75]).unwrap();
        let p = img.pad_replicate(1, 1, 4, 3).unwrap();
        assert_eq!(p.dims(), (4, 3));
        assert_eq!(&p.pixels()[0..4], &[0.25, 0.25, 0.75, 0.75]);
        assert_eq!(&p.pixels()[8..12], &[0.25, 0.25, 0.75, 0.75]);
    }
}
