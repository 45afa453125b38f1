//! Procedural stand-ins for SEM micrographs and their low-resolution scans.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::imagecore::{gaussian_blur, resize, translate, GrayImage, ResampleKernel};

pub const MIN_SYNTH_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Microstructure {
    /// Bright martensite islands in a darker ferrite matrix, with voids.
    DualPhase,
    /// Pearlite colonies of oriented lamellae with dark inclusions.
    Lamellar,
}

impl Microstructure {
    pub fn name(self) -> &'static str {
        match self {
            Microstructure::DualPhase => "dualphase",
            Microstructure::Lamellar => "lamellar",
        }
    }
}

impl std::str::FromStr for Microstructure {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dualphase" => Ok(Self::DualPhase),
            "lamellar" => Ok(Self::Lamellar),
            _ => Err(param(format!(
                "unknown microstructure `{s}` (dualphase | lamellar)"
            ))),
        }
    }
}

/// Bright-phase area fraction range of the dual-phase generator.
pub const DUALPHASE_FRACTION: (f64, f64) = (0.22, 0.38);
/// Lamella period range, pixels.
pub const LAMELLA_PERIOD: (f64, f64) = (4.0, 10.0);
/// Matrix and island grey levels; anything above their midpoint is island.
pub const MATRIX_LEVEL: f64 = 0.32;
pub const ISLAND_LEVEL: f64 = 0.74;

pub fn synth_microstructure(kind: Microstructure, size: usize, seed: u64) -> Result<GrayImage> {
    if size < MIN_SYNTH_SIZE {
        return Err(param(format!(
            "synthetic micrographs need size ≥ {MIN_SYNTH_SIZE}, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = match kind {
        Microstructure::DualPhase => dualphase(size, &mut rng),
        Microstructure::Lamellar => lamellar(size, &mut rng),
    };
    GrayImage::from_clamped(size, size, pixels)
}

/// Bilinear value noise with smoothstep easing on a lattice of spacing
/// `period`.
fn value_noise(size: usize, period: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cells = (size as f64 / period).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..cells * cells).map(|_| rng.random::<f64>()).collect();
    let ease = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = vec![0.0; size * size];
    out.par_chunks_mut(size).enumerate().for_each(|(y, row)| {
        let fy = y as f64 / period;
        let (iy, ty) = (fy.floor() as usize, ease(fy.fract()));
        for (x, o) in row.iter_mut().enumerate() {
            let fx = x as f64 / period;
            let (ix, tx) = (fx.floor() as usize, ease(fx.fract()));
            let l = |i: usize, j: usize| lattice[j * cells + i];
            let top = l(ix, iy) + (l(ix + 1, iy) - l(ix, iy)) * tx;
            let bot = l(ix, iy + 1) + (l(ix + 1, iy + 1) - l(ix, iy + 1)) * tx;
            *o = top + (bot - top) * ty;
        }
    });
    out
}

fn fbm(size: usize, period: f64, octaves: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut acc = vec![0.0; size * size];
    let mut amp = 1.0;
    let mut p = period;
    for _ in 0..octaves {
        let layer = value_noise(size, p, rng);
        for (a, v) in acc.iter_mut().zip(layer) {
            *a += amp * v;
        }
        amp *= 0.5;
        p = (p / 2.0).max(1.5);
    }
    acc
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    s[((q * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)]
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn dualphase(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let phase = fbm(size, 40.0, 4, rng);
    let grain = fbm(size, 7.0, 2, rng);
    let fine = fbm(size, 2.5, 1, rng);
    let fraction = rng.random_range(DUALPHASE_FRACTION.0..DUALPHASE_FRACTION.1);
    let t = quantile(&phase, 1.0 - fraction);
    let edge = 0.02;
    let mut px: Vec<f64> = (0..size * size)
        .map(|i| {
            let s = smoothstep(t - edge, t + edge, phase[i]);
            let matrix = MATRIX_LEVEL + 0.06 * (grain[i] - 0.9);
            let island = ISLAND_LEVEL + 0.08 * (fine[i] - 0.5);
            matrix + (island - matrix) * s
        })
        .collect();
    let voids = ((size * size) as f64 / 40_000.0 * rng.random_range(0.5..1.5)).round() as usize;
    for _ in 0..voids {
        let cx = rng.random_range(0.0..size as f64);
        let cy = rng.random_range(0.0..size as f64);
        let r = rng.random_range(1.5..3.5);
        stamp_ellipse(&mut px, size, cx, cy, r, r, 0.0, 0.06);
    }
    px
}

/// Darkens an anti-aliased ellipse towards `level`.
#[allow(clippy::too_many_arguments)]
fn stamp_ellipse(
    px: &mut [f64],
    size: usize,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    level: f64,
) {
    let reach = a.max(b) + 2.0;
    let (c, s) = (theta.cos(), theta.sin());
    let x0 = (cx - reach).floor().max(0.0) as usize;
    let y0 = (cy - reach).floor().max(0.0) as usize;
    let x1 = ((cx + reach).ceil() as usize).min(size - 1);
    let y1 = ((cy + reach).ceil() as usize).min(size - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let u = (dx * c + dy * s) / a;
            let v = (-dx * s + dy * c) / b;
            let d = (u * u + v * v).sqrt();
            // Roughly one pixel of soft edge.
            let cover = 1.0 - smoothstep(1.0 - 0.5 / b, 1.0 + 0.5 / b, d);
            let p = &mut px[y * size + x];
            *p += (level - *p) * cover;
        }
    }
}

struct Colony {
    x: f64,
    y: f64,
    kx: f64,
    ky: f64,
    phase: f64,
    ferrite: bool,
}

fn lamellar(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let count = ((size * size) as f64 / 6400.0).round().max(3.0) as usize;
    let colonies: Vec<Colony> = (0..count)
        .map(|_| {
            let theta = rng.random_range(0.0..PI);
            let period = rng.random_range(LAMELLA_PERIOD.0..=LAMELLA_PERIOD.1);
            Colony {
                x: rng.random_range(0.0..size as f64),
                y: rng.random_range(0.0..size as f64),
                kx: 2.0 * PI * theta.cos() / period,
                ky: 2.0 * PI * theta.sin() / period,
                phase: rng.random_range(0.0..2.0 * PI),
                ferrite: rng.random_bool(0.12),
            }
        })
        .collect();
    let mean = 0.45;
    let sharp = 2.5f64;
    let norm = sharp.tanh();
    let mut px = vec![0.0; size * size];
    px.par_chunks_mut(size).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let (fx, fy) = (x as f64, y as f64);
            let c = colonies
                .iter()
                .min_by(|a, b| {
                    let da = (a.x - fx).powi(2) + (a.y - fy).powi(2);
                    let db = (b.x - fx).powi(2) + (b.y - fy).powi(2);
                    da.total_cmp(&db)
                })
                .expect("at least three colonies");
            *o = if c.ferrite {
                mean
            } else {
                mean + 0.3 * (sharp * (c.kx * fx + c.ky * fy + c.phase).sin()).tanh() / norm
            };
        }
    });
    let inclusions =
        ((size * size) as f64 / 25_000.0 * rng.random_range(0.5..1.5)).round() as usize;
    for _ in 0..inclusions {
        let cx = rng.random_range(0.0..size as f64);
        let cy = rng.random_range(0.0..size as f64);
        let a = rng.random_range(3.0..10.0);
        let b = rng.random_range(1.5..4.0);
        let theta = rng.random_range(0.0..PI);
        stamp_ellipse(&mut px, size, cx, cy, a, b, theta, 0.08);
    }
    px
}

/// How the low-resolution scan of a specimen is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    pub factor: usize,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
    /// Sub-pixel content shift `(dx, dy)` in HR pixels.
    pub drift: (f64, f64),
    pub seed: u64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self {
            factor: 4,
            noise_sigma: 0.0,
            blur_sigma: 0.0,
            drift: (0.0, 0.0),
            seed: 0,
        }
    }
}

/// Blur, shift, bicubic 4× downsample, add Gaussian noise, clamp.
pub fn synth_degrade(hr: &GrayImage, p: &DegradationParams) -> Result<GrayImage> {
    if p.factor != 4 {
        return Err(param(format!(
            "degradation factor must be 4, got {}",
            p.factor
        )));
    }
    if hr.width() % p.factor != 0 || hr.height() % p.factor != 0 {
        return Err(param(format!(
            "{}×{} image is not divisible by {}",
            hr.width(),
            hr.height(),
            p.factor
        )));
    }
    if !(p.noise_sigma >= 0.0) {
        return Err(param(format!(
            "noise sigma must be ≥ 0, got {}",
            p.noise_sigma
        )));
    }
    let mut img = gaussian_blur(hr, p.blur_sigma)?;
    if p.drift != (0.0, 0.0) {
        img = translate(&img, p.drift.0, p.drift.1)?;
    }
    let low = resize(
        &img,
        hr.width() / p.factor,
        hr.height() / p.factor,
        &ResampleKernel::bicubic(),
    )?;
    if p.noise_sigma == 0.0 {
        return Ok(low);
    }
    let normal = Normal::new(0.0, p.noise_sigma).map_err(|e| param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let noisy = low
        .pixels()
        .iter()
        .map(|&v| v + normal.sample(&mut rng))
        .collect();
    Ok(GrayImage::from_clamped(low.width(), low.height(), noisy)?
        .with_bit_depth(low.bit_depth())
        .with_pixel_size(low.pixel_size_nm()))
}
