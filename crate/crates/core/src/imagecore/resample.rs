use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Nearest,
    Bicubic,
    Lanczos,
}

/// Interpolation kernel. Pixel centres sit at `(i + 0.5) / n` in unit
/// coordinates; on downscaling the kernel is stretched by the scale factor
/// so it also acts as the anti-aliasing filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleKernel {
    pub kind: KernelKind,
    /// Keys cubic parameter.
    pub bicubic_a: f64,
    pub lanczos_lobes: usize,
}

impl ResampleKernel {
    pub const fn new(kind: KernelKind) -> Self {
        Self {
            kind,
            bicubic_a: -0.5,
            lanczos_lobes: 3,
        }
    }

    pub const fn nearest() -> Self {
        Self::new(KernelKind::Nearest)
    }

    pub const fn bicubic() -> Self {
        Self::new(KernelKind::Bicubic)
    }

    pub const fn lanczos() -> Self {
        Self::new(KernelKind::Lanczos)
    }

    /// Half-width of the kernel at unit scale.
    pub fn support(&self) -> f64 {
        match self.kind {
            KernelKind::Nearest => 0.5,
            KernelKind::Bicubic => 2.0,
            KernelKind::Lanczos => self.lanczos_lobes as f64,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = x.abs();
        match self.kind {
            KernelKind::Nearest => {
                if t < 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            KernelKind::Bicubic => {
                let a = self.bicubic_a;
                if t <= 1.0 {
                    ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
                } else if t < 2.0 {
                    ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
                } else {
                    0.0
                }
            }
            KernelKind::Lanczos => {
                let lobes = self.lanczos_lobes as f64;
                if t == 0.0 {
                    1.0
                } else if t >= lobes || t.fract() == 0.0 {
                    // sin(πk) is not exactly zero in floating point.
                    0.0
                } else {
                    let px = PI * t;
                    lobes * px.sin() * (px / lobes).sin() / (px * px)
                }
            }
        }
    }
}

/// Weights of one output sample. The value is computed as
/// `x[anchor] + Σ w (x[j] − x[anchor])`, which equals `Σ w x[j]` for
/// normalized weights and reproduces constant inputs exactly.
#[derive(Debug, Clone)]
struct Taps {
    anchor: usize,
    taps: Vec<(usize, f64)>,
}

impl Taps {
    #[inline]
    fn apply(&self, get: impl Fn(usize) -> f64) -> f64 {
        let base = get(self.anchor);
        let mut acc = 0.0;
        for &(j, w) in &self.taps {
            acc += w * (get(j) - base);
        }
        base + acc
    }
}

fn clamp_index(j: isize, n: usize) -> usize {
    j.clamp(0, n as isize - 1) as usize
}

/// Builds normalized taps from `(source index, weight)` pairs.
fn build_taps(anchor: usize, raw: impl Iterator<Item = (usize, f64)>) -> Taps {
    let mut taps: Vec<(usize, f64)> = Vec::new();
    for (j, w) in raw {
        if w == 0.0 {
            continue;
        }
        match taps.iter_mut().find(|(k, _)| *k == j) {
            Some(t) => t.1 += w,
            None => taps.push((j, w)),
        }
    }
    let sum: f64 = taps.iter().map(|t| t.1).sum();
    for t in &mut taps {
        t.1 /= sum;
    }
    taps.retain(|&(j, _)| j != anchor);
    Taps { anchor, taps }
}

fn axis_taps(n_in: usize, n_out: usize, kernel: &ResampleKernel) -> Vec<Taps> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio;
            let anchor = clamp_index(center.floor() as isize, n_in);
            if kernel.kind == KernelKind::Nearest {
                return Taps {
                    anchor,
                    taps: Vec::new(),
                };
            }
            let fs = ratio.max(1.0);
            let reach = kernel.support() * fs;
            let lo = (center - reach).floor() as isize;
            let hi = (center + reach).ceil() as isize;
            build_taps(
                anchor,
                (lo..=hi).map(|j| {
                    let x = (j as f64 + 0.5 - center) / fs;
                    (clamp_index(j, n_in), kernel.eval(x))
                }),
            )
        })
        .collect()
}

/// Separable resampling of a raw plane. No clamping is applied, so this also
/// serves tensors in [-1, 1].
pub fn resize_plane(
    data: &[f64],
    width: usize,
    height: usize,
    out_w: usize,
    out_h: usize,
    kernel: &ResampleKernel,
) -> Vec<f64> {
    assert_eq!(data.len(), width * height, "plane length");
    let tx = axis_taps(width, out_w, kernel);
    let ty = axis_taps(height, out_h, kernel);
    apply_separable(data, width, height, &tx, &ty)
}

fn apply_separable(
    data: &[f64],
    width: usize,
    height: usize,
    tx: &[Taps],
    ty: &[Taps],
) -> Vec<f64> {
    let out_w = tx.len();
    let out_h = ty.len();
    let mut mid = vec![0.0; out_w * height];
    mid.par_chunks_mut(out_w).enumerate().for_each(|(y, row)| {
        let src = &data[y * width..(y + 1) * width];
        for (o, t) in row.iter_mut().zip(tx) {
            *o = t.apply(|j| src[j]);
        }
    });
    let mut out = vec![0.0; out_w * out_h];
    out.par_chunks_mut(out_w)
        .zip(ty.par_iter())
        .for_each(|(row, t)| {
            for (x, o) in row.iter_mut().enumerate() {
                *o = t.apply(|j| mid[j * out_w + x]);
            }
        });
    out
}

/// Resamples to an explicit size.
pub fn resize(
    img: &GrayImage,
    out_w: usize,
    out_h: usize,
    kernel: &ResampleKernel,
) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(param(format!("output size {out_w}×{out_h} is empty")));
    }
    let data = resize_plane(
        img.pixels(),
        img.width(),
        img.height(),
        out_w,
        out_h,
        kernel,
    );
    let scale = out_w as f64 / img.width() as f64;
    Ok(GrayImage::from_clamped(out_w, out_h, data)?
        .with_bit_depth(img.bit_depth())
        .with_pixel_size(img.pixel_size_nm().map(|p| p / scale)))
}

/// Resamples by `scale`; output dims are `round(scale · dims)`.
pub fn resample(img: &GrayImage, scale: f64, kernel: &ResampleKernel) -> Result<GrayImage> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(param(format!("scale must be positive, got {scale}")));
    }
    let ow = (img.width() as f64 * scale).round() as usize;
    let oh = (img.height() as f64 * scale).round() as usize;
    resize(img, ow, oh, kernel)
}

/// Bicubic down by `factor`, then bicubic back up to the original size.
pub fn degrade_reference(img: &GrayImage, factor: usize) -> Result<GrayImage> {
    if factor == 0 || img.width() % factor != 0 || img.height() % factor != 0 {
        return Err(param(format!(
            "{}×{} reference is not divisible by {factor}",
            img.width(),
            img.height()
        )));
    }
    let k = ResampleKernel::bicubic();
    let low = resize(img, img.width() / factor, img.height() / factor, &k)?;
    resize(&low, img.width(), img.height(), &k)
}

fn shift_taps(n: usize, d: f64, kernel: &ResampleKernel) -> Vec<Taps> {
    (0..n)
        .map(|i| {
            let src = i as f64 - d;
            let base = src.floor();
            let anchor = clamp_index(src.round() as isize, n);
            let reach = kernel.support().ceil() as isize;
            build_taps(
                anchor,
                (-reach + 1..=reach).map(|o| {
                    let j = base as isize + o;
                    (clamp_index(j, n), kernel.eval(j as f64 - src))
                }),
            )
        })
        .collect()
}

/// Content moved by `(dx, dy)` pixels with bicubic interpolation, edges
/// replicated: `out(x, y) = img(x − dx, y − dy)`.
pub fn translate(img: &GrayImage, dx: f64, dy: f64) -> Result<GrayImage> {
    if !(dx.is_finite() && dy.is_finite()) {
        return Err(param("non-finite shift"));
    }
    let k = ResampleKernel::bicubic();
    let tx = shift_taps(img.width(), dx, &k);
    let ty = shift_taps(img.height(), dy, &k);
    let data = apply_separable(img.pixels(), img.width(), img.height(), &tx, &ty);
    Ok(GrayImage::from_clamped(img.width(), img.height(), data)?
        .with_bit_depth(img.bit_depth())
        .with_pixel_size(img.pixel_size_nm()))
}

/// Separable Gaussian blur, truncated at 3σ, edges replicated.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(param(format!("blur sigma must be ≥ 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let r = (3.0 * sigma).ceil() as isize;
    let taps = |n: usize| -> Vec<Taps> {
        (0..n)
            .map(|i| {
                build_taps(
                    i,
                    (-r..=r).map(|o| {
                        let w = (-(o * o) as f64 / (2.0 * sigma * sigma)).exp();
                        (clamp_index(i as isize + o, n), w)
                    }),
                )
            })
            .collect()
    };
    let data = apply_separable(
        img.pixels(),
        img.width(),
        img.height(),
        &taps(img.width()),
        &taps(img.height()),
    );
    Ok(GrayImage::from_clamped(img.width(), img.height(), data)?
        .with_bit_depth(img.bit_depth())
        .with_pixel_size(img.pixel_size_nm()))
}
