use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::align::realign_pair;
use super::manifest::{
    split, ReferenceEntry, Source, SplitFractions, TripletEntry, TripletManifest, MANIFEST_FILE,
};
use super::synth::{synth_degrade, synth_microstructure, DegradationParams, Microstructure};
use crate::error::{param, Result};
use crate::imagecore::{save_png, BitDepth, GrayImage};

/// One LR/HR patch pair at grid cell `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub row: usize,
    pub col: usize,
    pub hr: GrayImage,
    pub lr: GrayImage,
}

/// Non-overlapping `hr_patch` grid over `hr` with the LR patches at the same
/// cells, coordinates divided by `factor`.
pub fn extract_patches(
    hr: &GrayImage,
    lr: &GrayImage,
    lr_patch: usize,
    factor: usize,
) -> Result<Vec<PatchPair>> {
    let hp = lr_patch * factor;
    if lr_patch == 0 || hr.width() < hp || hr.height() < hp {
        return Err(param(format!(
            "{}×{} micrograph is smaller than one {hp}×{hp} patch",
            hr.width(),
            hr.height()
        )));
    }
    if lr.width() != hr.width() / factor || lr.height() != hr.height() / factor {
        return Err(param(format!(
            "LR {}×{} does not match HR {}×{} at factor {factor}",
            lr.width(),
            lr.height(),
            hr.width(),
            hr.height()
        )));
    }
    let (rows, cols) = (hr.height() / hp, hr.width() / hp);
    let mut out = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            out.push(PatchPair {
                row,
                col,
                hr: hr.crop(col * hp, row * hp, hp, hp)?,
                lr: lr.crop(col * lr_patch, row * lr_patch, lr_patch, lr_patch)?,
            });
        }
    }
    Ok(out)
}

/// `count` square patches at uniformly random positions.
pub fn extract_reference_patches(
    img: &GrayImage,
    size: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<GrayImage>> {
    if img.width() < size || img.height() < size || size == 0 {
        return Err(param(format!(
            "{}×{} image is smaller than a {size}×{size} reference",
            img.width(),
            img.height()
        )));
    }
    (0..count)
        .map(|_| {
            let x = rng.random_range(0..=img.width() - size);
            let y = rng.random_range(0..=img.height() - size);
            img.crop(x, y, size, size)
        })
        .collect()
}

/// Recipe for a synthetic triplet corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub micrographs: usize,
    /// Patch grid per micrograph axis.
    pub grid: usize,
    pub lr_patch: usize,
    pub ref_patch: usize,
    pub reference_micrographs_per_kind: usize,
    pub references_per_micrograph: usize,
    pub kinds: Vec<Microstructure>,
    pub search_radius: usize,
    /// Largest simulated drift per axis, HR pixels.
    pub max_drift: f64,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            micrographs: 8,
            grid: 8,
            lr_patch: 32,
            ref_patch: 96,
            reference_micrographs_per_kind: 1,
            references_per_micrograph: 8,
            kinds: vec![Microstructure::DualPhase, Microstructure::Lamellar],
            search_radius: 4,
            max_drift: 3.0,
            noise_sigma: 0.02,
            blur_sigma: 0.8,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn triplets(&self) -> usize {
        self.micrographs * self.grid * self.grid
    }

    fn validate(&self) -> Result<()> {
        if self.micrographs == 0 || self.grid == 0 || self.kinds.is_empty() {
            return Err(param(
                "corpus needs at least one micrograph, grid cell and kind",
            ));
        }
        if self.ref_patch % 4 != 0 || self.ref_patch == 0 {
            return Err(param(format!(
                "ref_patch {} must be a positive multiple of 4",
                self.ref_patch
            )));
        }
        if self.max_drift > self.search_radius as f64 {
            return Err(param("max_drift exceeds the search radius"));
        }
        Ok(())
    }
}

/// A curated corpus held in memory; paths match the manifest.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: TripletManifest,
    pub files: Vec<(String, GrayImage)>,
}

impl Corpus {
    pub fn image(&self, path: &str) -> Option<&GrayImage> {
        self.files.iter().find(|(p, _)| p == path).map(|(_, i)| i)
    }

    /// Writes every image (16-bit PNG) and the manifest under `root`.
    pub fn write(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        self.files
            .par_iter()
            .try_for_each(|(p, img)| save_png(img, root.join(p)))?;
        self.manifest.save(root.join(MANIFEST_FILE))
    }
}

fn sub_seed(seed: u64, tag: u64, i: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.set_word_pos(i as u128 * 16);
    rng.random()
}

/// Synthesizes micrographs, simulates drifted noisy LR scans, cuts patches,
/// realigns every HR patch to its LR partner, draws references and splits
/// 80/10/10.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let hp = cfg.lr_patch * 4;
    let r = cfg.search_radius;
    let size = cfg.grid * hp + 2 * r;
    let mut manifest = TripletManifest::new(cfg.lr_patch as u32, cfg.ref_patch as u32, cfg.seed);
    let mut files = Vec::new();

    let mut refs_by_kind: Vec<(Microstructure, Vec<String>)> = Vec::new();
    for (k, &kind) in cfg.kinds.iter().enumerate() {
        let mut ids = Vec::new();
        for m in 0..cfg.reference_micrographs_per_kind {
            let s = sub_seed(cfg.seed, 1, (k * 1000 + m) as u64);
            let img = synth_microstructure(kind, size, s)?;
            let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5eed);
            let patches = extract_reference_patches(
                &img,
                cfg.ref_patch,
                cfg.references_per_micrograph,
                &mut rng,
            )?;
            for (i, p) in patches.into_iter().enumerate() {
                let id = format!("{}-ref{m:02}-{i:03}", kind.name());
                let path = format!("ref/{id}.png");
                manifest.references.push(ReferenceEntry {
                    id: id.clone(),
                    path: path.clone(),
                    source: Source::Synthetic,
                });
                files.push((path, p.with_bit_depth(BitDepth::Sixteen)));
                ids.push(id);
            }
        }
        refs_by_kind.push((kind, ids));
    }

    let per_micrograph: Vec<Vec<(TripletEntry, GrayImage, GrayImage)>> = (0..cfg.micrographs)
        .into_par_iter()
        .map(|m| -> Result<_> {
            let kind_index = m % cfg.kinds.len();
            let kind = cfg.kinds[kind_index];
            let s = sub_seed(cfg.seed, 2, m as u64);
            let specimen = synth_microstructure(kind, size, s)?;
            let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0xd81f);
            let drift = (
                rng.random_range(-cfg.max_drift..=cfg.max_drift),
                rng.random_range(-cfg.max_drift..=cfg.max_drift),
            );
            let whole = (drift.0.round() as i64, drift.1.round() as i64);
            let seen = specimen.crop(
                (r as i64 + whole.0) as usize,
                (r as i64 + whole.1) as usize,
                cfg.grid * hp,
                cfg.grid * hp,
            )?;
            let scan = synth_degrade(
                &seen,
                &DegradationParams {
                    factor: 4,
                    noise_sigma: cfg.noise_sigma,
                    blur_sigma: cfg.blur_sigma,
                    drift: (drift.0 - whole.0 as f64, drift.1 - whole.1 as f64),
                    seed: s ^ 0x4015e,
                },
            )?;
            let mut out = Vec::with_capacity(cfg.grid * cfg.grid);
            for row in 0..cfg.grid {
                for col in 0..cfg.grid {
                    let lr = scan.crop(
                        col * cfg.lr_patch,
                        row * cfg.lr_patch,
                        cfg.lr_patch,
                        cfg.lr_patch,
                    )?;
                    let region = specimen.crop(col * hp, row * hp, hp + 2 * r, hp + 2 * r)?;
                    let a = realign_pair(&region, &lr, r)?;
                    let id = format!("{}-m{m:03}-r{row:02}c{col:02}", kind.name());
                    let entry = TripletEntry {
                        lr_path: format!("lr/{id}.png"),
                        hr_path: format!("hr/{id}.png"),
                        id,
                        ref_ids: refs_by_kind[kind_index].1.clone(),
                        split: None,
                        alignment_offset: a.offset,
                        source: Source::Synthetic,
                    };
                    out.push((entry, lr, a.hr_crop));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    for (entry, lr, hr) in per_micrograph.into_iter().flatten() {
        files.push((entry.lr_path.clone(), lr.with_bit_depth(BitDepth::Sixteen)));
        files.push((entry.hr_path.clone(), hr.with_bit_depth(BitDepth::Sixteen)));
        manifest.entries.push(entry);
    }
    let manifest = split(&manifest, SplitFractions::default(), cfg.seed)?;
    manifest.validate()?;
    Ok(Corpus { manifest, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_patch_is_the_input() {
        let hr = synth_microstructure(Microstructure::Lamellar, 128, 1).unwrap();
        let lr = GrayImage::filled(32, 32, 0.5).unwrap();
        let p = extract_patches(&hr, &lr, 32, 4).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].hr, hr);
        assert_eq!(p[0].lr, lr);
    }

    #[test]
    fn grid_correspondence() {
        let hr =
            GrayImage::from_fn(256, 384, |x, y| ((x / 128) * 3 + y / 128) as f64 / 10.0).unwrap();
        let lr = GrayImage::from_fn(64, 96, |x, y| ((x / 32) * 3 + y / 32) as f64 / 10.0).unwrap();
        let p = extract_patches(&hr, &lr, 32, 4).unwrap();
        assert_eq!(p.len(), 6);
        for pp in &p {
            assert_eq!(pp.hr.get(0, 0), pp.lr.get(0, 0));
            assert_eq!(pp.hr.get(127, 127), pp.lr.get(31, 31));
        }
    }

    #[test]
    fn too_small_rejected() {
        let hr = GrayImage::filled(100, 200, 0.5).unwrap();
        let lr = GrayImage::filled(25, 50, 0.5).unwrap();
        assert!(extract_patches(&hr, &lr, 32, 4).is_err());
    }

    #[test]
    fn tiny_corpus_is_consistent() {
        let cfg = CorpusConfig {
            micrographs: 2,
            grid: 2,
            references_per_micrograph: 2,
            ref_patch: 32,
            ..Default::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        assert_eq!(c.manifest.entries.len(), 8);
        assert_eq!(c.manifest.references.len(), 4);
        assert_eq!(c.manifest.split_counts().iter().sum::<usize>(), 8);
        for e in &c.manifest.entries {
            assert_eq!(c.image(&e.hr_path).unwrap().dims(), (128, 128));
            assert_eq!(c.image(&e.lr_path).unwrap().dims(), (32, 32));
            assert!(e.alignment_offset.0.abs() <= 4 && e.alignment_offset.1.abs() <= 4);
        }
        let again = generate_corpus(&cfg).unwrap();
        assert_eq!(again.manifest, c.manifest);
    }
}
