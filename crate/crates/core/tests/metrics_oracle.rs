mod common;

use common::{psnr_reference, random_pair, ssim_reference};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semsr::imagecore::GrayImage;
use semsr::metrics::{aggregate, psnr, ssim, SsimParams, Unit};

#[test]
fn ssim_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = SsimParams::default();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (a, b) = random_pair(&mut rng);
        let fast = ssim(&a, &b, &p).unwrap();
        worst = worst.max((fast - ssim_reference(&a, &b, 11, 1.5)).abs());
    }
    assert!(worst < 1e-9, "max deviation {worst:e}");
}

#[test]
fn psnr_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let (a, b) = random_pair(&mut rng);
        let d = (psnr(&a, &b, 1.0).unwrap() - psnr_reference(&a, &b, 1.0)).abs();
        assert!(d < 1e-9, "{d:e}");
    }
}

#[test]
fn ssim_of_identical_images_is_exactly_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let (a, _) = random_pair(&mut rng);
        assert_eq!(ssim(&a, &a, &SsimParams::default()).unwrap(), 1.0);
    }
}

#[test]
fn ssim_of_constant_images_has_closed_form() {
    // Flat images have zero variance, leaving the luminance term.
    let (ca, cb) = (0.3, 0.7);
    let a = GrayImage::filled(16, 16, ca).unwrap();
    let b = GrayImage::filled(16, 16, cb).unwrap();
    let c1 = 1e-4;
    let want = (2.0 * ca * cb + c1) / (ca * ca + cb * cb + c1);
    let got = ssim(&a, &b, &SsimParams::default()).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn psnr_of_one_code_step_in_eight_bits() {
    let a = GrayImage::filled(8, 8, 0.0).unwrap();
    let b = GrayImage::filled(8, 8, 1.0 / 255.0).unwrap();
    let v = psnr(&a, &b, 1.0).unwrap();
    assert!((v - 48.130803608679).abs() < 1e-6, "{v}");
    assert!((v - 20.0 * 255f64.log10()).abs() < 1e-9);
}

#[test]
fn psnr_of_full_scale_error_is_zero() {
    let a = GrayImage::filled(8, 8, 0.0).unwrap();
    let b = GrayImage::filled(8, 8, 1.0).unwrap();
    assert_eq!(psnr(&a, &b, 1.0).unwrap(), 0.0);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
}

#[test]
fn standard_error_matches_textbook_formula() {
    let scores = [0.61, 0.63, 0.62, 0.64, 0.60];
    let r = aggregate("SSIM", Unit::Dimensionless, &scores).unwrap();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((r.mean - mean).abs() < 1e-15);
    assert!((r.stderr - sd / n.sqrt()).abs() < 1e-15);
    assert_eq!(r.display(), "0.620 ± 0.007");
}
