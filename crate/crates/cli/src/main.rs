use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use semsr::dataset::{
    generate_corpus, realign_pair, synth_microstructure, AcquisitionSpec, CorpusConfig,
    Microstructure, Split, TripletManifest, DEFAULT_SEARCH_RADIUS, MANIFEST_FILE,
};
use semsr::imagecore::{load_png, save_png, GrayImage};
use semsr::pipeline::{enhance_micrograph, evaluate, plan_rescan, EvalSet, Method, TilePlan};
use semsr::ttsr::{select_references, write_curve, Model, TrainConfig, Trainer, TrainingSet};

/// Reference-based super-resolution for SEM micrographs.
#[derive(Debug, Parser)]
#[command(name = "semsr", version)]
struct Cli {
    /// Seed overriding the one in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration: a corpus recipe for `curate`, a training
    /// configuration for `train`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic micrograph as a 16-bit PNG.
    Synth {
        /// `dualphase` or `lamellar`.
        #[arg(long, default_value = "dualphase")]
        kind: Microstructure,
        /// Side length in pixels.
        #[arg(long, default_value_t = 512)]
        size: usize,
    },
    /// Build a triplet corpus directory from synthetic acquisitions.
    Curate(CurateArgs),
    /// Realign an HR image to its LR partner by SSIM search.
    Align {
        /// HR image, larger than 4× the LR by at least the radius per side.
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        lr: PathBuf,
        /// Largest offset searched, HR pixels.
        #[arg(long, default_value_t = DEFAULT_SEARCH_RADIUS)]
        radius: usize,
    },
    /// Train a model on a curated corpus.
    Train {
        /// Curated corpus directory.
        #[arg(long)]
        data: PathBuf,
        /// Total optimizer steps, overriding the configuration.
        #[arg(long)]
        steps: Option<u64>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Enhance a whole LR micrograph tile by tile.
    Enhance {
        /// Trained model file.
        #[arg(long)]
        weights: PathBuf,
        /// LR micrograph PNG.
        #[arg(long)]
        input: PathBuf,
        /// Reference PNGs, or directories of them.
        #[arg(long, num_args = 1.., required = true)]
        refs: Vec<PathBuf>,
        /// LR tile side.
        #[arg(long, default_value_t = 32)]
        tile: usize,
        /// LR pixels shared by neighbouring tiles.
        #[arg(long, default_value_t = 4)]
        overlap: usize,
    },
    /// Score interpolation baselines and the model on the test split.
    Eval {
        /// Curated corpus directory.
        #[arg(long)]
        data: PathBuf,
        /// Trained model file; without it the `ttsr` row is skipped.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "nearest,bicubic,lanczos,ttsr,oracle"
        )]
        methods: Vec<Method>,
    },
    /// Estimate the time of a scan-enhance-rescan session.
    Plan {
        /// Total area, µm².
        #[arg(long)]
        a_total: f64,
        /// Area to rescan at full resolution, µm².
        #[arg(long)]
        a_interest: f64,
        /// Dwell time per pixel, µs.
        #[arg(long, default_value_t = 32.0)]
        dwell: f64,
        /// HR pixel size, nm.
        #[arg(long, default_value_t = 32.5)]
        pixel_size: f64,
        /// HR scan window, pixels per axis.
        #[arg(long, default_value_t = 4096)]
        window: usize,
    },
    /// Check every differentiable operator against finite differences.
    GradCheck,
}

#[derive(Debug, Args)]
struct CurateArgs {
    /// Specimen micrographs, cycling through the kinds.
    #[arg(long)]
    micrographs: Option<usize>,
    /// Patches per axis cut from each micrograph.
    #[arg(long)]
    grid: Option<usize>,
    /// LR patch side; HR patches are 4× larger.
    #[arg(long)]
    lr_patch: Option<usize>,
    /// Reference patch side.
    #[arg(long)]
    ref_patch: Option<usize>,
    #[arg(long)]
    refs_per_micrograph: Option<usize>,
    /// Gaussian noise std added to LR scans.
    #[arg(long)]
    noise: Option<f64>,
    /// Gaussian blur sigma before downsampling, HR pixels.
    #[arg(long)]
    blur: Option<f64>,
    /// Order each triplet's references by descriptor similarity under
    /// these weights.
    #[arg(long)]
    select_with: Option<PathBuf>,
}

/// A failure caused by the invocation rather than by the program.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

macro_rules! usage {
    ($($t:tt)*) => { anyhow::Error::new(UsageError(format!($($t)*))) };
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let user = e.chain().any(|c| {
        c.downcast_ref::<UsageError>().is_some()
            || c.downcast_ref::<semsr::Error>()
                .is_some_and(|e| e.is_user_error())
    });
    if user {
        1
    } else {
        2
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage!("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let seed = cli.seed;
    let out = cli.out.clone();
    let config = cli.config.clone();
    match cli.command {
        Command::Synth { kind, size } => {
            let seed = seed.unwrap_or(0);
            let img = synth_microstructure(kind, size, seed)?;
            let path = out.unwrap_or_else(|| PathBuf::from(format!("{}-{seed}.png", kind.name())));
            save_png(&img, &path)?;
            println!("{}", path.display());
        }
        Command::Curate(args) => curate(args, seed, config.as_deref(), out)?,
        Command::Align { hr, lr, radius } => {
            let a = realign_pair(&load_png(&hr)?, &load_png(&lr)?, radius)?;
            if let Some(path) = &out {
                save_png(&a.hr_crop, path)?;
            }
            let v = serde_json::json!({ "dx": a.offset.0, "dy": a.offset.1, "ssim": a.ssim });
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Command::Train {
            data,
            steps,
            resume,
        } => train(
            &data,
            steps,
            resume.as_deref(),
            seed,
            config.as_deref(),
            out,
        )?,
        Command::Enhance {
            weights,
            input,
            refs,
            tile,
            overlap,
        } => {
            let model = Model::load(&weights)?;
            let lr = load_png(&input)?;
            let refs = load_references(&refs)?;
            let prepared = model.prepare_references(&refs)?;
            let sr = enhance_micrograph(&lr, &model, &prepared, &TilePlan { tile, overlap })?;
            let path = out.unwrap_or_else(|| PathBuf::from("enhanced.png"));
            save_png(&sr, &path)?;
            println!("{} ({}×{})", path.display(), sr.width(), sr.height());
        }
        Command::Eval {
            data,
            weights,
            methods,
        } => {
            let manifest = TripletManifest::load(data.join(MANIFEST_FILE))?;
            let set = EvalSet::from_manifest(&manifest, Split::Test, |p| load_png(data.join(p)))?;
            let model = weights.as_deref().map(Model::load).transpose()?;
            let report = evaluate(&set, &methods, model.as_ref())?;
            print!("{}", report.to_table());
            if let Some(path) = &out {
                write_file(path, report.to_json()?)?;
            }
        }
        Command::Plan {
            a_total,
            a_interest,
            dwell,
            pixel_size,
            window,
        } => {
            let acq = AcquisitionSpec {
                dwell_us: dwell,
                pixel_size_nm: pixel_size,
                window,
            };
            let plan = plan_rescan(a_total, a_interest, &acq)?;
            println!("ratio {}", plan.ratio);
            let json = plan.to_json()?;
            match &out {
                Some(path) => write_file(path, json)?,
                None => print!("{json}"),
            }
        }
        Command::GradCheck => {
            let checks = semsr_tensorad::gradcheck::run_all()?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!(
                    "{:<6} {:<36} max rel err {:.3e}",
                    if c.passed { "ok" } else { "FAIL" },
                    c.name,
                    c.max_rel_err
                );
            }
            if failed > 0 {
                bail!("{failed} of {} gradient checks failed", checks.len());
            }
        }
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| usage!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage!("invalid configuration {}: {e}", path.display()))
}

fn curate(
    args: CurateArgs,
    seed: Option<u64>,
    config: Option<&Path>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg: CorpusConfig = match config {
        Some(p) => read_json(p)?,
        None => CorpusConfig::default(),
    };
    let set = |dst: &mut usize, v: Option<usize>| *dst = v.unwrap_or(*dst);
    set(&mut cfg.micrographs, args.micrographs);
    set(&mut cfg.grid, args.grid);
    set(&mut cfg.lr_patch, args.lr_patch);
    set(&mut cfg.ref_patch, args.ref_patch);
    set(&mut cfg.references_per_micrograph, args.refs_per_micrograph);
    cfg.noise_sigma = args.noise.unwrap_or(cfg.noise_sigma);
    cfg.blur_sigma = args.blur.unwrap_or(cfg.blur_sigma);
    cfg.seed = seed.unwrap_or(cfg.seed);
    let root = out.unwrap_or_else(|| PathBuf::from("corpus"));
    info!("synthesizing {} triplets", cfg.triplets());
    let mut corpus = generate_corpus(&cfg)?;
    if let Some(weights) = &args.select_with {
        let model = Model::load(weights)?;
        corpus.manifest = select_references(&model, &corpus.manifest, |p| {
            corpus
                .image(p)
                .cloned()
                .ok_or_else(|| semsr::Error::Config(format!("corpus has no image `{p}`")))
        })?;
    }
    corpus.write(&root)?;
    let [train, val, test] = corpus.manifest.split_counts();
    println!("{}: {train} train, {val} val, {test} test", root.display());
    Ok(())
}

fn train(
    data: &Path,
    steps: Option<u64>,
    resume: Option<&Path>,
    seed: Option<u64>,
    config: Option<&Path>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.steps = steps.unwrap_or(cfg.steps);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    let out = out.unwrap_or_else(|| PathBuf::from("run"));
    let mut trainer = match resume {
        Some(p) => Trainer::load_checkpoint(&cfg, p)?,
        None => Trainer::new(&cfg)?,
    };
    let manifest = TripletManifest::load(data.join(MANIFEST_FILE))?;
    let load = |p: &str| load_png(data.join(p));
    let manifest = select_references(&trainer.model(), &manifest, load)?;
    let train_set = TrainingSet::build(&manifest, Split::Train, load)?;
    let val_set = TrainingSet::build(&manifest, Split::Val, load)?;
    if train_set.is_empty() {
        return Err(usage!("{} has no training triplets", data.display()));
    }
    info!(
        "training {} steps from step {} on {} triplets ({} validation)",
        cfg.steps,
        trainer.step_count(),
        train_set.len(),
        val_set.len()
    );
    let every = (cfg.steps / 20).max(1);
    let outcome = trainer.run(&train_set, &val_set, Some(&out.join("checkpoints")), |r| {
        if r.step % every == 0 {
            info!(
                "step {:>6}  lr {:.2e}  L_rec {:.4}  L_total {:.4}",
                r.step, r.lr, r.rec, r.total
            );
        }
    })?;
    outcome.model.save(out.join("model.semsr"))?;
    let mut csv = Vec::new();
    write_curve(&mut csv, &outcome.curve)?;
    write_file(&out.join("loss_curve.csv"), csv)?;
    write_file(
        &out.join("validation.json"),
        serde_json::to_string_pretty(&outcome.validation)? + "\n",
    )?;
    trainer.save_checkpoint(out.join("final.ckpt.semsr"))?;
    for v in &outcome.validation {
        println!("validation step {:>6}  L_rec {:.5}", v.step, v.rec);
    }
    println!("{}", out.join("model.semsr").display());
    Ok(())
}

/// `(file stem, image)` for every PNG given directly or inside a directory,
/// in sorted path order.
fn load_references(paths: &[PathBuf]) -> Result<Vec<(String, GrayImage)>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(usage!("no reference images found"));
    }
    files
        .iter()
        .map(|f| {
            let id = f
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((id, load_png(f)?))
        })
        .collect()
}
