use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsr::imagecore::{degrade_reference, resample, resize, translate, GrayImage, ResampleKernel};

const KERNELS: [ResampleKernel; 3] = [
    ResampleKernel::nearest(),
    ResampleKernel::bicubic(),
    ResampleKernel::lanczos(),
];

/// Keys cubic with a = −0.5, written out piecewise.
fn keys(x: f64) -> f64 {
    let t = x.abs();
    if t <= 1.0 {
        1.5 * t.powi(3) - 2.5 * t.powi(2) + 1.0
    } else if t < 2.0 {
        -0.5 * t.powi(3) + 2.5 * t.powi(2) - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// Normalized weights over every source index, edge indices replicated.
fn weights_1d(n_in: usize, n_out: usize) -> Vec<Vec<f64>> {
    let ratio = n_in as f64 / n_out as f64;
    let stretch = ratio.max(1.0);
    (0..n_out)
        .map(|i| {
            let centre = (i as f64 + 0.5) * ratio;
            let mut w = vec![0.0; n_in];
            let lo = (centre - 2.0 * stretch).floor() as i64 - 1;
            let hi = (centre + 2.0 * stretch).ceil() as i64 + 1;
            for j in lo..=hi {
                let k = keys((j as f64 + 0.5 - centre) / stretch);
                w[j.clamp(0, n_in as i64 - 1) as usize] += k;
            }
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Dense two-dimensional bicubic resize.
fn bicubic_reference(img: &GrayImage, ow: usize, oh: usize) -> Vec<f64> {
    let (w, h) = img.dims();
    let wx = weights_1d(w, ow);
    let wy = weights_1d(h, oh);
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for y in 0..h {
                if wy[oy][y] == 0.0 {
                    continue;
                }
                for x in 0..w {
                    acc += wy[oy][y] * wx[ox][x] * img.get(x, y);
                }
            }
            out[oy * ow + ox] = acc.clamp(0.0, 1.0);
        }
    }
    out
}

#[test]
fn constants_are_preserved_exactly() {
    for k in KERNELS {
        for &(w, h) in &[(16, 16), (13, 7), (40, 24)] {
            for &scale in &[0.25, 0.5, 1.0, 2.0, 3.0, 4.0] {
                for &c in &[0.0, 0.123456789, 0.5, 1.0] {
                    let img = GrayImage::filled(w, h, c).unwrap();
                    let out = resample(&img, scale, &k).unwrap();
                    assert!(
                        out.pixels().iter().all(|&v| v == img.get(0, 0)),
                        "{k:?} scale {scale} const {c}"
                    );
                }
            }
        }
    }
}

#[test]
fn bicubic_reproduces_ramps_on_interiors() {
    let ramp =
        GrayImage::from_fn(32, 32, |x, y| 0.1 + 0.015 * x as f64 + 0.004 * y as f64).unwrap();
    let up = resample(&ramp, 4.0, &ResampleKernel::bicubic()).unwrap();
    for oy in 8..120 {
        for ox in 8..120 {
            let (sx, sy) = ((ox as f64 + 0.5) / 4.0 - 0.5, (oy as f64 + 0.5) / 4.0 - 0.5);
            let want = 0.1 + 0.015 * sx + 0.004 * sy;
            assert!((up.get(ox, oy) - want).abs() < 1e-9, "({ox}, {oy})");
        }
    }
    let big =
        GrayImage::from_fn(128, 128, |x, y| 0.05 + 0.004 * x as f64 + 0.002 * y as f64).unwrap();
    let down = resample(&big, 0.25, &ResampleKernel::bicubic()).unwrap();
    for oy in 2..30 {
        for ox in 2..30 {
            let (sx, sy) = (4.0 * ox as f64 + 1.5, 4.0 * oy as f64 + 1.5);
            let want = 0.05 + 0.004 * sx + 0.002 * sy;
            assert!((down.get(ox, oy) - want).abs() < 1e-9, "({ox}, {oy})");
        }
    }
}

#[test]
fn unit_scale_is_identity_at_sample_sites() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = GrayImage::from_fn(23, 17, |_, _| rng.random::<f64>()).unwrap();
    for k in KERNELS {
        let out = resample(&img, 1.0, &k).unwrap();
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-12, "{k:?}");
        }
    }
}

#[test]
fn bicubic_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = GrayImage::from_fn(20, 12, |_, _| rng.random::<f64>()).unwrap();
    for &(ow, oh) in &[(80, 48), (5, 3), (10, 6), (31, 19)] {
        let fast = resize(&img, ow, oh, &ResampleKernel::bicubic()).unwrap();
        let slow = bicubic_reference(&img, ow, oh);
        for (a, b) in fast.pixels().iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9, "{ow}×{oh}: {a} vs {b}");
        }
    }
}

#[test]
fn degraded_checkerboard_matches_reference() {
    let board = GrayImage::from_fn(
        32,
        32,
        |x, y| if (x / 2 + y / 2) % 2 == 0 { 0.9 } else { 0.1 },
    )
    .unwrap();
    let got = degrade_reference(&board, 4).unwrap();
    let low = GrayImage::new(8, 8, bicubic_reference(&board, 8, 8)).unwrap();
    let want = bicubic_reference(&low, 32, 32);
    for (a, b) in got.pixels().iter().zip(&want) {
        assert!((a - b).abs() < 1e-9);
    }
    // A 2-pixel checkerboard lies above the Nyquist limit of the 4× grid.
    let spread = got
        .pixels()
        .iter()
        .fold(0.0f64, |m, v| m.max((v - 0.5).abs()));
    assert!(spread < 0.2, "{spread}");
    assert_eq!(got.dims(), board.dims());
}

#[test]
fn integer_translation_shifts_indices() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = GrayImage::from_fn(24, 24, |_, _| rng.random::<f64>()).unwrap();
    for &(dx, dy) in &[(1i64, 0i64), (0, -2), (3, 2), (-1, -1)] {
        let t = translate(&img, dx as f64, dy as f64).unwrap();
        for y in 4..20i64 {
            for x in 4..20i64 {
                let want = img.get((x - dx) as usize, (y - dy) as usize);
                assert!((t.get(x as usize, y as usize) - want).abs() < 1e-12);
            }
        }
    }
}
