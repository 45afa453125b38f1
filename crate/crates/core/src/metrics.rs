//! SSIM, PSNR and `mean ± standard error` aggregation.

use semsr_tensorad::kernels::pairwise_sum;
use serde::{Serialize, Serializer};

use crate::error::{param, shape, Result};
use crate::imagecore::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    /// Side of the square Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    /// Normalized 1-D Gaussian; the 2-D window is its outer product.
    pub fn weights_1d(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - c;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / s).collect()
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || !(self.sigma > 0.0) || !(self.k1 > 0.0) || !(self.k2 > 0.0) {
            return Err(param("SSIM needs window ≥ 1, sigma > 0, k1 > 0, k2 > 0"));
        }
        Ok(())
    }
}

fn same_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(shape(format!(
            "image sizes differ: {}×{} vs {}×{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Valid-mode separable filtering of a `w`×`h` plane.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut mid = vec![0.0; ow * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            mid[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, kw)| kw * mid[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean of the local SSIM map over window positions fully inside the image.
pub fn ssim(a: &GrayImage, b: &GrayImage, p: &SsimParams) -> Result<f64> {
    same_dims(a, b)?;
    p.validate()?;
    let (w, h) = a.dims();
    if w < p.window || h < p.window {
        return Err(param(format!(
            "{w}×{h} image is smaller than the {0}×{0} SSIM window",
            p.window
        )));
    }
    let k = p.weights_1d();
    let (x, y) = (a.pixels(), b.pixels());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(u, v)| u * v).collect();
    let mx = filter_valid(x, w, h, &k);
    let my = filter_valid(y, w, h, &k);
    let mxx = filter_valid(&xx, w, h, &k);
    let myy = filter_valid(&yy, w, h, &k);
    let mxy = filter_valid(&xy, w, h, &k);
    let (c1, c2) = (p.c1(), p.c2());
    let map: Vec<f64> = (0..mx.len())
        .map(|i| local_ssim(mx[i], my[i], mxx[i], myy[i], mxy[i], c1, c2))
        .collect();
    Ok(pairwise_sum(&map) / map.len() as f64)
}

/// Written so that identical inputs give exactly 1 and swapped inputs give
/// the identical value.
#[inline]
fn local_ssim(mx: f64, my: f64, mxx: f64, myy: f64, mxy: f64, c1: f64, c2: f64) -> f64 {
    let mxmy = mx * my;
    let vx = mxx - mx * mx;
    let vy = myy - my * my;
    let cov = mxy - mxmy;
    ((mxmy + mxmy + c1) * (cov + cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Peak signal-to-noise ratio in dB; identical images give `+∞`.
pub fn psnr(a: &GrayImage, b: &GrayImage, max_value: f64) -> Result<f64> {
    same_dims(a, b)?;
    if !(max_value > 0.0) {
        return Err(param(format!(
            "max_value must be positive, got {max_value}"
        )));
    }
    let sq: Vec<f64> = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(u, v)| (u - v) * (u - v))
        .collect();
    let mse = pairwise_sum(&sq) / sq.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / mse).log10())
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`,
/// since JSON has no representation for them.
pub fn serialize_f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Dimensionless,
    #[serde(rename = "dB")]
    Decibel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    #[serde(serialize_with = "serialize_f64")]
    pub mean: f64,
    /// Standard error of the mean: sample standard deviation / √n.
    #[serde(serialize_with = "serialize_f64")]
    pub stderr: f64,
    pub n: usize,
    pub unit: Unit,
    #[serde(skip)]
    pub scores: Vec<f64>,
}

impl MetricReport {
    /// `mean ± stderr` with the error rounded to one significant figure and
    /// the mean to the same decimal place.
    pub fn display(&self) -> String {
        format_pm(self.mean, self.stderr)
    }
}

/// Mean and standard error of `scores`. The result does not depend on the
/// order of the scores (they are sorted before summation).
pub fn aggregate(metric: &str, unit: Unit, scores: &[f64]) -> Result<MetricReport> {
    if scores.is_empty() {
        return Err(param(format!(
            "cannot aggregate an empty list of {metric} scores"
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = pairwise_sum(&sorted) / n as f64;
    let stderr = if n == 1 || sorted.iter().all(|v| v.to_bits() == sorted[0].to_bits()) {
        0.0
    } else {
        let dev: Vec<f64> = sorted.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    Ok(MetricReport {
        metric: metric.to_string(),
        mean,
        stderr,
        n,
        unit,
        scores: scores.to_vec(),
    })
}

fn format_float(v: f64, decimals: usize) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.decimals$}")
    }
}

/// Formats `mean ± err` at the precision implied by `err`.
pub fn format_pm(mean: f64, err: f64) -> String {
    if !err.is_finite() {
        return format!("{} ± {}", format_float(mean, 3), format_float(err, 0));
    }
    if err == 0.0 {
        return format!("{} ± 0", format_float(mean, 3));
    }
    let mut exp = err.abs().log10().floor() as i32;
    let mut digit = (err / 10f64.powi(exp)).round();
    if digit >= 10.0 {
        exp += 1;
        digit = 1.0;
    }
    let decimals = (-exp).max(0) as usize;
    let rounded = digit * 10f64.powi(exp);
    format!(
        "{} ± {}",
        format_float(mean, decimals),
        format_float(rounded, decimals)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> GrayImage {
        GrayImage::from_fn(w, h, f).unwrap()
    }

    #[test]
    fn window_weights_sum_to_one() {
        let k = SsimParams::default().weights_1d();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((k[0] - k[10]).abs() < 1e-18);
    }

    #[test]
    fn ssim_self_is_exactly_one() {
        let a = img(20, 17, |x, y| ((x * 7 + y * 13) % 11) as f64 / 10.0);
        assert_eq!(ssim(&a, &a, &SsimParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn ssim_errors() {
        let p = SsimParams::default();
        let a = img(12, 12, |_, _| 0.5);
        let b = img(13, 12, |_, _| 0.5);
        assert!(matches!(ssim(&a, &b, &p), Err(crate::Error::Shape(_))));
        let s = img(10, 20, |_, _| 0.5);
        assert!(matches!(ssim(&s, &s, &p), Err(crate::Error::Param(_))));
    }

    #[test]
    fn psnr_cases() {
        let a = img(8, 8, |x, y| (x + y) as f64 / 20.0 + 0.1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let zeros = img(4, 4, |_, _| 0.0);
        let ones = img(4, 4, |_, _| 1.0);
        assert_eq!(psnr(&zeros, &ones, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn aggregate_statistics() {
        let r = aggregate("ssim", Unit::Dimensionless, &[0.5]).unwrap();
        assert_eq!((r.mean, r.stderr, r.n), (0.5, 0.0, 1));
        let r = aggregate("ssim", Unit::Dimensionless, &[0.0, 1.0]).unwrap();
        assert_eq!(r.mean, 0.5);
        assert!((r.stderr - 0.5).abs() < 1e-15);
        assert!(aggregate("ssim", Unit::Dimensionless, &[]).is_err());
    }

    #[test]
    fn aggregate_is_order_independent() {
        let a = [0.31, 0.7, 1e-9, 0.25, 0.9999, 0.123456789];
        let mut b = a;
        b.reverse();
        b.swap(1, 4);
        let ra = aggregate("x", Unit::Dimensionless, &a).unwrap();
        let rb = aggregate("x", Unit::Dimensionless, &b).unwrap();
        assert_eq!(ra.mean.to_bits(), rb.mean.to_bits());
        assert_eq!(ra.stderr.to_bits(), rb.stderr.to_bits());
    }

    #[test]
    fn plus_minus_formatting() {
        assert_eq!(format_pm(0.6223, 0.0021), "0.622 ± 0.002");
        assert_eq!(format_pm(0.626, 0.0024), "0.626 ± 0.002");
        assert_eq!(format_pm(25.963, 0.13), "26.0 ± 0.1");
        assert_eq!(format_pm(0.5, 0.0996), "0.5 ± 0.1");
        assert_eq!(format_pm(123.4, 23.0), "123 ± 20");
        assert_eq!(format_pm(f64::INFINITY, 0.0), "inf ± 0");
    }

    #[test]
    fn report_json_handles_infinity() {
        let r = aggregate("psnr", Unit::Decibel, &[f64::INFINITY, f64::INFINITY]).unwrap();
        let j = serde_json::to_value(&r).unwrap();
        assert_eq!(j["mean"], "inf");
        assert_eq!(j["stderr"], 0.0);
        assert_eq!(j["unit"], "dB");
        assert_eq!(j["n"], 2);
    }
}
