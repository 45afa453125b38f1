//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use semsr::dataset::{synth_degrade, synth_microstructure, DegradationParams, Microstructure};
use semsr::imagecore::GrayImage;

pub const RADIUS: usize = 8;

/// Straight two-dimensional evaluation of the windowed SSIM: explicit
/// Gaussian weights, two-pass moments, every valid window position.
pub fn ssim_reference(a: &GrayImage, b: &GrayImage, window: usize, sigma: f64) -> f64 {
    let (w, h) = a.dims();
    let c = (window as f64 - 1.0) / 2.0;
    let mut weights = vec![0.0; window * window];
    for v in 0..window {
        for u in 0..window {
            let (du, dv) = (u as f64 - c, v as f64 - c);
            weights[v * window + u] = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|x| *x /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - window {
        for x0 in 0..=w - window {
            let px = |img: &GrayImage, u: usize, v: usize| img.get(x0 + u, y0 + v);
            let mut mx = 0.0;
            let mut my = 0.0;
            for v in 0..window {
                for u in 0..window {
                    let g = weights[v * window + u];
                    mx += g * px(a, u, v);
                    my += g * px(b, u, v);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for v in 0..window {
                for u in 0..window {
                    let g = weights[v * window + u];
                    let (dx, dy) = (px(a, u, v) - mx, px(b, u, v) - my);
                    vx += g * dx * dx;
                    vy += g * dy * dy;
                    cov += g * dx * dy;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

pub fn psnr_reference(a: &GrayImage, b: &GrayImage, peak: f64) -> f64 {
    let n = a.pixels().len() as f64;
    let mse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n;
    10.0 * (peak * peak / mse).log10()
}

pub fn random_pair(rng: &mut ChaCha8Rng) -> (GrayImage, GrayImage) {
    let a = GrayImage::from_fn(32, 32, |_, _| rng.random::<f64>()).unwrap();
    let mix = rng.random::<f64>();
    let b = GrayImage::from_fn(32, 32, |x, y| {
        mix * a.get(x, y) + (1.0 - mix) * rng.random::<f64>()
    })
    .unwrap();
    (a, b)
}

/// A specimen, the LR scan of its crop displaced by `(dx, dy)` from the
/// centre, with optional additive noise.
pub fn planted(seed: u64, dx: i32, dy: i32, noise: f64) -> (GrayImage, GrayImage) {
    let lr_side = 32;
    let hr_side = lr_side * 4 + 2 * RADIUS;
    let kind = if seed % 2 == 0 {
        Microstructure::DualPhase
    } else {
        Microstructure::Lamellar
    };
    let hr = synth_microstructure(kind, hr_side, seed).unwrap();
    let crop = hr
        .crop(
            (RADIUS as i32 + dx) as usize,
            (RADIUS as i32 + dy) as usize,
            lr_side * 4,
            lr_side * 4,
        )
        .unwrap();
    let lr = synth_degrade(
        &crop,
        &DegradationParams {
            noise_sigma: noise,
            seed: seed ^ 0xabc,
            ..Default::default()
        },
    )
    .unwrap();
    (hr, lr)
}
