use rayon::prelude::*;

use crate::error::{param, Result};
use crate::imagecore::{resize, GrayImage, ResampleKernel};
use crate::metrics::{ssim, SsimParams};

pub const DEFAULT_SEARCH_RADIUS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// HR-space offset of the best crop from the centred nominal crop.
    pub offset: (i32, i32),
    pub ssim: f64,
    pub hr_crop: GrayImage,
}

/// Finds the integer offset at which a `4·lr`-sized crop of `hr`, bicubic
/// downsampled by 4, best matches `lr` in SSIM.
///
/// The nominal crop is centred in `hr`; offsets range over
/// `[-radius, radius]²`. Ties prefer the smallest `|dx| + |dy|`, then
/// row-major order.
pub fn realign_pair(hr: &GrayImage, lr: &GrayImage, radius: usize) -> Result<Alignment> {
    const FACTOR: usize = 4;
    let (cw, ch) = (lr.width() * FACTOR, lr.height() * FACTOR);
    if cw > hr.width() || ch > hr.height() {
        return Err(param(format!(
            "4× LR ({cw}×{ch}) exceeds HR ({}×{})",
            hr.width(),
            hr.height()
        )));
    }
    let x0 = (hr.width() - cw) / 2;
    let y0 = (hr.height() - ch) / 2;
    if x0 < radius || y0 < radius || x0 + cw + radius > hr.width() || y0 + ch + radius > hr.height()
    {
        return Err(param(format!(
            "search radius {radius} does not fit: HR {}×{}, crop {cw}×{ch}",
            hr.width(),
            hr.height()
        )));
    }
    let r = radius as i32;
    let offsets: Vec<(i32, i32)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .collect();
    let params = SsimParams::default();
    let kernel = ResampleKernel::bicubic();
    let scores: Vec<f64> = offsets
        .par_iter()
        .map(|&(dx, dy)| -> Result<f64> {
            let crop = hr.crop((x0 as i32 + dx) as usize, (y0 as i32 + dy) as usize, cw, ch)?;
            let down = resize(&crop, lr.width(), lr.height(), &kernel)?;
            ssim(&down, lr, &params)
        })
        .collect::<Result<_>>()?;
    // Row-major enumeration order doubles as the final tie-break.
    let mut best = 0;
    for i in 1..offsets.len() {
        let (s, b) = (scores[i], scores[best]);
        let l1 = |(dx, dy): (i32, i32)| dx.abs() + dy.abs();
        if s > b || (s == b && l1(offsets[i]) < l1(offsets[best])) {
            best = i;
        }
    }
    let (dx, dy) = offsets[best];
    Ok(Alignment {
        offset: (dx, dy),
        ssim: scores[best],
        hr_crop: hr.crop((x0 as i32 + dx) as usize, (y0 as i32 + dy) as usize, cw, ch)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{synth_microstructure, Microstructure};

    #[test]
    fn aligned_pair_gives_zero_offset() {
        let hr = synth_microstructure(Microstructure::DualPhase, 144, 2).unwrap();
        let lr = resize(
            &hr.crop(8, 8, 128, 128).unwrap(),
            32,
            32,
            &ResampleKernel::bicubic(),
        )
        .unwrap();
        let a = realign_pair(&hr, &lr, 8).unwrap();
        assert_eq!(a.offset, (0, 0));
        assert_eq!(a.ssim, 1.0);
    }

    #[test]
    fn radius_must_fit() {
        let hr = GrayImage::filled(140, 140, 0.5).unwrap();
        let lr = GrayImage::filled(32, 32, 0.5).unwrap();
        assert!(realign_pair(&hr, &lr, 8).is_err());
        assert!(realign_pair(&hr, &lr, 6).is_ok());
    }

    #[test]
    fn flat_images_tie_to_zero_offset() {
        let hr = GrayImage::filled(140, 140, 0.5).unwrap();
        let lr = GrayImage::filled(32, 32, 0.5).unwrap();
        assert_eq!(realign_pair(&hr, &lr, 6).unwrap().offset, (0, 0));
    }
}
