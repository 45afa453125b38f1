//! End-to-end acceptance checks. Each criterion prints one `PASS`/`FAIL`
//! line straight to stderr (bypassing the test harness capture) and the
//! test fails if any criterion does.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsr::dataset::{
    generate_corpus, realign_pair, synth_degrade, synth_microstructure, Corpus, CorpusConfig,
    DegradationParams, Microstructure, Split, TripletManifest,
};
use semsr::imagecore::{gaussian_blur, resample, GrayImage, ResampleKernel};
use semsr::metrics::{psnr, ssim, SsimParams};
use semsr::pipeline::{
    enhance_micrograph, evaluate, plan_rescan, seam_statistic, tile_core, Decision, EvalSet,
    Method, TilePlan,
};
use semsr::ttsr::loss::loss_adv_critic;
use semsr::ttsr::{
    select_references, LrConfig, Model, PreparedReference, TrainConfig, TrainOutcome, Trainer,
    TrainingSet,
};
use semsr_tensorad::{gradcheck, Graph, Tensor, Var, WeightsFile};

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(name: &'static str, pass: bool, detail: String) -> Verdict {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    Verdict { name, pass, detail }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (
        e < limit,
        format!("{:.1} s (limit {} s)", e.as_secs_f64(), limit.as_secs()),
    )
}

fn metric_oracles() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let p = SsimParams::default();
    let (mut ssim_dev, mut psnr_dev) = (0.0f64, 0.0f64);
    let mut identity = true;
    for _ in 0..100 {
        let (a, b) = common::random_pair(&mut rng);
        ssim_dev = ssim_dev
            .max((ssim(&a, &b, &p).unwrap() - common::ssim_reference(&a, &b, 11, 1.5)).abs());
        psnr_dev =
            psnr_dev.max((psnr(&a, &b, 1.0).unwrap() - common::psnr_reference(&a, &b, 1.0)).abs());
        identity &= ssim(&a, &a, &p).unwrap() == 1.0;
    }
    let zero = GrayImage::filled(8, 8, 0.0).unwrap();
    let step = GrayImage::filled(8, 8, 1.0 / 255.0).unwrap();
    let db = psnr(&zero, &step, 1.0).unwrap();
    let closed = (db - 20.0 * 255f64.log10()).abs() < 1e-6 && (db - 48.1308).abs() < 1e-4;
    let (fast, time) = within(t, Duration::from_secs(10));
    verdict(
        "metric oracles",
        ssim_dev < 1e-9 && psnr_dev < 1e-9 && identity && closed && fast,
        format!("SSIM dev {ssim_dev:.1e}, PSNR dev {psnr_dev:.1e}, ssim(x,x)=1 {identity}, 1-code PSNR {db:.6} dB, {time}"),
    )
}

fn resampling() -> Verdict {
    let t = Instant::now();
    let kernels = [
        ResampleKernel::nearest(),
        ResampleKernel::bicubic(),
        ResampleKernel::lanczos(),
    ];
    let mut constants = true;
    for k in &kernels {
        for &s in &[0.25, 0.5, 1.0, 2.0, 4.0] {
            let img = GrayImage::filled(24, 20, 0.37).unwrap();
            let c = img.get(0, 0);
            constants &= resample(&img, s, k)
                .unwrap()
                .pixels()
                .iter()
                .all(|&v| v == c);
        }
    }
    let ramp =
        GrayImage::from_fn(32, 32, |x, y| 0.1 + 0.015 * x as f64 + 0.004 * y as f64).unwrap();
    let up = resample(&ramp, 4.0, &ResampleKernel::bicubic()).unwrap();
    let mut ramp_dev = 0.0f64;
    for oy in 8..120 {
        for ox in 8..120 {
            let (sx, sy) = ((ox as f64 + 0.5) / 4.0 - 0.5, (oy as f64 + 0.5) / 4.0 - 0.5);
            ramp_dev = ramp_dev.max((up.get(ox, oy) - (0.1 + 0.015 * sx + 0.004 * sy)).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let noise = GrayImage::from_fn(19, 23, |_, _| rng.random::<f64>()).unwrap();
    let id_dev = kernels
        .iter()
        .flat_map(|k| {
            let out = resample(&noise, 1.0, k).unwrap();
            out.pixels()
                .iter()
                .zip(noise.pixels())
                .map(|(a, b)| (a - b).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0f64, f64::max);
    let (fast, time) = within(t, Duration::from_secs(5));
    verdict(
        "resampling",
        constants && ramp_dev < 1e-9 && id_dev < 1e-12 && fast,
        format!("constants exact {constants}, ramp dev {ramp_dev:.1e}, scale-1 dev {id_dev:.1e}, {time}"),
    )
}

fn autodiff() -> Verdict {
    let t = Instant::now();
    let checks = gradcheck::run_all().unwrap();
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0f64, f64::max);
    let all = checks.iter().all(|c| c.passed && c.max_rel_err < 1e-3);
    let gp = checks.iter().any(|c| c.name.contains("gradient_penalty"));
    let settings = gradcheck::FD_STEP == 1e-5 && gradcheck::REL_TOL == 1e-3;
    let (fast, time) = within(t, Duration::from_secs(60));
    verdict(
        "autodiff",
        all && gp && settings && fast,
        format!(
            "{} ops checked, worst rel err {worst:.1e}, penalty path included {gp}, {time}",
            checks.len()
        ),
    )
}

fn wasserstein_closed_form() -> Verdict {
    let mut g = Graph::<f64>::new();
    let real = g.constant(Tensor::full(&[2, 3, 8, 8], 0.4));
    let fake = g.constant(Tensor::full(&[2, 3, 8, 8], -0.2));
    let xhat = g.constant(Tensor::full(&[2, 3, 8, 8], 0.1));
    let c = g.param(Tensor::new(&[1, 1], vec![-1.3]).unwrap());
    let constant = |g: &mut Graph<f64>, x: Var| -> semsr::Result<Var> {
        let n = g.shape(x)[0];
        Ok(g.expand(c, &[n, 1])?)
    };
    let l = loss_adv_critic(&mut g, constant, fake, real, xhat, 10.0).unwrap();
    let const_loss = g.value(l).item();

    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let u = Tensor::<f64>::rand_uniform(&[48, 1], -1.0, 1.0, &mut rng);
    let norm = u.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut g = Graph::<f64>::new();
    let uv = g.param(u.map(|v| v / norm));
    let linear = |g: &mut Graph<f64>, x: Var| -> semsr::Result<Var> {
        let n = g.shape(x)[0];
        let f = g.reshape(x, &[n, 48])?;
        Ok(g.matmul(f, uv)?)
    };
    let x = g.constant(Tensor::<f64>::rand_uniform(
        &[3, 3, 4, 4],
        -1.0,
        1.0,
        &mut rng,
    ));
    // Identical batches cancel the critic means, leaving λ times the penalty.
    let l = loss_adv_critic(&mut g, linear, x, x, x, 10.0).unwrap();
    let penalty = g.value(l).item() / 10.0;
    verdict(
        "gradient penalty closed form",
        const_loss == 10.0 && penalty.abs() < 1e-9,
        format!("constant critic loss {const_loss}, unit linear critic penalty {penalty:.1e}"),
    )
}

fn alignment() -> Verdict {
    let t = Instant::now();
    let shifts = [-8, -4, 0, 4, 8];
    let mut exact = 0;
    for (i, &dy) in shifts.iter().enumerate() {
        for (j, &dx) in shifts.iter().enumerate() {
            let (hr, lr) = common::planted(500 + (i * 5 + j) as u64, dx, dy, 0.0);
            exact += (realign_pair(&hr, &lr, common::RADIUS).unwrap().offset == (dx, dy)) as usize;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let r = common::RADIUS as i32;
    let mut noisy = 0;
    for trial in 0..100 {
        let (dx, dy) = (rng.random_range(-r..=r), rng.random_range(-r..=r));
        let (hr, lr) = common::planted(3000 + trial, dx, dy, 0.01);
        noisy += (realign_pair(&hr, &lr, common::RADIUS).unwrap().offset == (dx, dy)) as usize;
    }
    let (fast, time) = within(t, Duration::from_secs(30));
    verdict(
        "alignment",
        exact == 25 && noisy >= 95 && fast,
        format!("noise-free {exact}/25, sigma 0.01 {noisy}/100, {time}"),
    )
}

fn planner() -> Verdict {
    let acq = semsr::dataset::AcquisitionSpec::default();
    let zero = plan_rescan(1.0, 0.0, &acq).unwrap();
    let even = plan_rescan(16.0, 15.0, &acq).unwrap();
    let below = plan_rescan(16.0, 14.999, &acq).unwrap();
    let minutes = zero.t_hr_window / 60.0;
    let pass = zero.ratio == 0.0625
        && even.ratio == 1.0
        && even.decision == Decision::DirectHr
        && below.decision == Decision::EnhanceFirst
        && (zero.t_hr_window - 540.0).abs() / 540.0 < 0.01;
    verdict(
        "rescan planner",
        pass,
        format!(
            "ratio(0) {}, ratio(15/16) {}, 4096² scan {:.2} s ({minutes:.2} min), 1024² scan {:.2} s",
            zero.ratio, even.ratio, zero.t_hr_window, zero.t_lr_window
        ),
    )
}

/// Desk-scale training run shared by the training, ordering and stitching
/// checks.
struct Desk {
    corpus: Corpus,
    manifest: TripletManifest,
    config: TrainConfig,
    outcome: TrainOutcome,
    elapsed: Duration,
}

fn desk_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        steps: 500,
        stage_switch: 0.8,
        batch_size: 4,
        lr: LrConfig {
            base: 1e-4,
            max: 1e-3,
            cycle: 250,
        },
        ..Default::default()
    };
    cfg.model.res_blocks = 4;
    cfg.loss.per = 0.1;
    cfg
}

fn train_desk() -> Desk {
    let t = Instant::now();
    let corpus = generate_corpus(&CorpusConfig::default()).unwrap();
    let config = desk_config();
    let mut trainer = Trainer::new(&config).unwrap();
    let load = |p: &str| {
        corpus
            .image(p)
            .cloned()
            .ok_or_else(|| semsr::Error::Config(format!("missing {p}")))
    };
    let manifest = select_references(&trainer.model(), &corpus.manifest, load).unwrap();
    let train = TrainingSet::build(&manifest, Split::Train, load).unwrap();
    let val = TrainingSet::build(&manifest, Split::Val, load).unwrap();
    let outcome = trainer.run(&train, &val, None, |_| {}).unwrap();
    Desk {
        corpus,
        manifest,
        config,
        outcome,
        elapsed: t.elapsed(),
    }
}

fn window_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn desk_training(d: &Desk) -> Verdict {
    let v = &d.outcome.validation;
    let switch = d.config.switch_step();
    let initial = v
        .iter()
        .find(|p| p.step == 0)
        .map(|p| p.rec)
        .unwrap_or(f64::NAN);
    let stage1 = v
        .iter()
        .find(|p| p.step == switch)
        .map(|p| p.rec)
        .unwrap_or(f64::NAN);
    let ratio = stage1 / initial;
    let totals: Vec<f64> = d.outcome.curve.iter().map(|r| r.total).collect();
    let w = 50;
    let s = switch as usize;
    let before = window_mean(&totals[s - w..s]);
    let after = window_mean(&totals[s..s + w]);
    let triplets = d.corpus.manifest.entries.len();
    let limit = Duration::from_secs(30 * 60);
    let pass = triplets == 512 && ratio <= 0.5 && after > before && d.elapsed < limit;
    verdict(
        "desk training",
        pass,
        format!(
            "{triplets} triplets, validation L_rec {initial:.4} -> {stage1:.4} at the switch ({:.1}%), \
             L_total mean over {w} steps {before:.4} before / {after:.4} after the switch, {:.0} s (limit {} s)",
            100.0 * ratio,
            d.elapsed.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

fn end_to_end(d: &Desk) -> Verdict {
    let load = |p: &str| {
        d.corpus
            .image(p)
            .cloned()
            .ok_or_else(|| semsr::Error::Config(format!("missing {p}")))
    };
    let set = EvalSet::from_manifest(&d.manifest, Split::Test, load).unwrap();
    let report = evaluate(
        &set,
        &[Method::Bicubic, Method::Ttsr],
        Some(&d.outcome.model),
    )
    .unwrap();
    let (b, t) = (
        report.row(Method::Bicubic).unwrap(),
        report.row(Method::Ttsr).unwrap(),
    );
    let (ds, dp) = (t.ssim.mean - b.ssim.mean, t.psnr.mean - b.psnr.mean);
    verdict(
        "ordering against bicubic",
        ds >= 0.0 && dp >= 0.0,
        format!(
            "n {}: SSIM ttsr {:.4} vs bicubic {:.4} (margin {ds:+.4}), PSNR {:.3} vs {:.3} dB (margin {dp:+.3} dB)",
            t.ssim.n, t.ssim.mean, b.ssim.mean, t.psnr.mean, b.psnr.mean
        ),
    )
}

fn stitching(d: &Desk) -> Verdict {
    let model = &d.outcome.model;
    let refs: Vec<(String, GrayImage)> = d
        .manifest
        .references
        .iter()
        .map(|r| (r.id.clone(), d.corpus.image(&r.path).unwrap().clone()))
        .collect();
    let prepared: Vec<PreparedReference> = model.prepare_references(&refs).unwrap();
    let plan = TilePlan::default();

    let specimen = synth_microstructure(Microstructure::DualPhase, 1024, 77).unwrap();
    let lr = synth_degrade(
        &specimen,
        &DegradationParams {
            noise_sigma: 0.02,
            blur_sigma: 0.8,
            seed: 78,
            ..Default::default()
        },
    )
    .unwrap();
    let a = enhance_micrograph(&lr, model, &prepared, &plan).unwrap();
    let b = enhance_micrograph(&lr, model, &prepared, &plan).unwrap();
    let identical = a.dims() == (1024, 1024)
        && a.pixels()
            .iter()
            .zip(b.pixels())
            .all(|(x, y)| x.to_bits() == y.to_bits());

    let tiles = plan.tiles(lr.width(), lr.height());
    let t = tiles
        .iter()
        .find(|t| t.row == 5 && t.col == 5)
        .copied()
        .unwrap();
    let core = tile_core(model, &prepared, &plan.pad(&lr).unwrap(), t, &plan).unwrap();
    let cs = plan.core() * 4;
    let placed = a.crop(t.x * 4, t.y * 4, cs, cs).unwrap();
    let tile_matches = placed == core;

    let smooth_src = GrayImage::from_fn(256, 256, |x, y| {
        let (u, v) = (x as f64 / 256.0, y as f64 / 256.0);
        0.5 + 0.2 * (std::f64::consts::TAU * u).sin() * (std::f64::consts::PI * v).cos() + 0.1 * u
    })
    .unwrap();
    let smooth = gaussian_blur(&smooth_src, 2.0).unwrap();
    let sr = enhance_micrograph(&smooth, model, &prepared, &plan).unwrap();
    let seams = seam_statistic(&sr, cs).unwrap();
    verdict(
        "stitching",
        identical && tile_matches && seams.ratio <= 1.5,
        format!(
            "256² -> {}×{} bit-identical {identical}, interior tile recomputed exactly {tile_matches}, \
             seam/interior jump {:.2e}/{:.2e} = {:.3}",
            a.width(),
            a.height(),
            seams.seam,
            seams.interior,
            seams.ratio
        ),
    )
}

fn serialization() -> Verdict {
    let config = {
        let mut c = TrainConfig {
            steps: 4,
            stage_switch: 0.5,
            batch_size: 2,
            ..Default::default()
        };
        c.model.res_blocks = 1;
        c.model.hr_patch = 64;
        c
    };
    let model = Model::init(&config.model).unwrap();
    let bytes = model.to_bytes();
    let weights_ok = Model::from_bytes(&bytes).unwrap().to_bytes() == bytes;

    let corpus = generate_corpus(&CorpusConfig {
        micrographs: 2,
        grid: 2,
        lr_patch: 16,
        ref_patch: 16,
        references_per_micrograph: 2,
        ..Default::default()
    })
    .unwrap();
    let json = corpus.manifest.to_json().unwrap();
    let manifest_ok = TripletManifest::from_json(&json)
        .unwrap()
        .to_json()
        .unwrap()
        == json;

    let data = TrainingSet::from_corpus(&corpus, Split::Train).unwrap();
    let mut straight = Trainer::new(&config).unwrap();
    let full: Vec<_> = (0..4).map(|_| straight.step(&data).unwrap()).collect();
    let mut first = Trainer::new(&config).unwrap();
    let mut resumed_curve: Vec<_> = (0..2).map(|_| first.step(&data).unwrap()).collect();
    let ckpt = WeightsFile::from_bytes(&first.checkpoint().to_bytes()).unwrap();
    let mut second = Trainer::resume(&config, &ckpt).unwrap();
    resumed_curve.extend((0..2).map(|_| second.step(&data).unwrap()));
    let resume_ok = resumed_curve == full && second.model() == straight.model();
    verdict(
        "serialization",
        weights_ok && manifest_ok && resume_ok,
        format!(
            "weights {} bytes round-trip {weights_ok}, manifest round-trip {manifest_ok}, resumed run equals straight run over {} steps {resume_ok}",
            bytes.len(),
            full.len()
        ),
    )
}

#[test]
fn acceptance() {
    let mut verdicts = vec![
        metric_oracles(),
        resampling(),
        autodiff(),
        wasserstein_closed_form(),
        alignment(),
        planner(),
        serialization(),
    ];
    let desk = train_desk();
    verdicts.push(desk_training(&desk));
    verdicts.push(end_to_end(&desk));
    verdicts.push(stitching(&desk));
    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| format!("{}: {}", v.name, v.detail))
        .collect();
    let _ = std::io::stderr().write_all(
        format!(
            "acceptance: {}/{} criteria passed\n",
            verdicts.len() - failed.len(),
            verdicts.len()
        )
        .as_bytes(),
    );
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
}
