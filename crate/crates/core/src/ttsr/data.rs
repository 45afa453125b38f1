//! Triplets as normalized tensors, ready for batching.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use semsr_tensorad::Tensor;

use super::model::upsample_bicubic;
use crate::dataset::{Corpus, Split, TripletManifest, MANIFEST_FILE};
use crate::error::{param, shape, Error, Result};
use crate::imagecore::{degrade_reference, load_png, to_normalized, GrayImage};

/// One triplet. Every tensor is `[1, 3, h, w]` in `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub lr: Tensor<f64>,
    /// Bicubic ×4 of `lr`.
    pub lr_up: Tensor<f64>,
    pub hr: Tensor<f64>,
    /// Index into [`TrainingSet::references`] of the first listed reference.
    pub reference: usize,
}

/// A reference and its degraded form, both `[1, 3, s, s]`.
#[derive(Debug, Clone)]
pub struct ReferenceTensors {
    pub id: String,
    pub hr: Tensor<f64>,
    pub degraded: Tensor<f64>,
}

impl ReferenceTensors {
    pub fn from_image(id: impl Into<String>, img: &GrayImage) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            hr: to_normalized(img).to_tensor(),
            degraded: to_normalized(&degrade_reference(img, 4)?).to_tensor(),
        })
    }
}

/// Batched tensors, `[n, 3, …]` each.
#[derive(Debug, Clone)]
pub struct Batch {
    pub lr: Tensor<f64>,
    pub lr_up: Tensor<f64>,
    pub hr: Tensor<f64>,
    pub ref_hr: Tensor<f64>,
    pub ref_degraded: Tensor<f64>,
}

/// The samples of one split with the references they use.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub samples: Vec<Sample>,
    pub references: Vec<ReferenceTensors>,
}

impl TrainingSet {
    /// Builds the set for `split` from images looked up by manifest path.
    pub fn build<F>(manifest: &TripletManifest, split: Split, load: F) -> Result<Self>
    where
        F: Fn(&str) -> Result<GrayImage> + Sync,
    {
        let entries: Vec<_> = manifest.entries_in(split).collect();
        let mut ref_index: HashMap<&str, usize> = HashMap::new();
        let mut ref_ids = Vec::new();
        for e in &entries {
            let id = e
                .ref_ids
                .first()
                .ok_or_else(|| param(format!("triplet `{}` has no reference", e.id)))?;
            if !ref_index.contains_key(id.as_str()) {
                ref_index.insert(id, ref_ids.len());
                ref_ids.push(id.as_str());
            }
        }
        let references = ref_ids
            .par_iter()
            .map(|id| {
                let entry = manifest
                    .reference(id)
                    .ok_or_else(|| param(format!("unknown reference `{id}`")))?;
                ReferenceTensors::from_image(*id, &load(&entry.path)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let samples = entries
            .par_iter()
            .map(|e| {
                let lr = to_normalized(&load(&e.lr_path)?).to_tensor();
                let hr = to_normalized(&load(&e.hr_path)?).to_tensor();
                let lr_up = upsample_bicubic(&lr, 4)?;
                if lr_up.shape() != hr.shape() {
                    return Err(shape(format!(
                        "`{}`: HR {:?} is not 4× LR {:?}",
                        e.id,
                        hr.shape(),
                        lr.shape()
                    )));
                }
                Ok(Sample {
                    id: e.id.clone(),
                    lr,
                    lr_up,
                    hr,
                    reference: ref_index[e.ref_ids[0].as_str()],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            references,
        })
    }

    pub fn from_corpus(corpus: &Corpus, split: Split) -> Result<Self> {
        Self::build(&corpus.manifest, split, |p| {
            corpus
                .image(p)
                .cloned()
                .ok_or_else(|| Error::Config(format!("corpus has no image `{p}`")))
        })
    }

    /// Loads a curated directory (`manifest.json` plus PNGs).
    pub fn from_dir(root: impl AsRef<Path>, split: Split) -> Result<Self> {
        let root = root.as_ref();
        let manifest = TripletManifest::load(root.join(MANIFEST_FILE))?;
        Self::build(&manifest, split, |p| load_png(root.join(p)))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Concatenates the samples at `indices` along the batch axis.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(param("empty batch"));
        }
        let samples = || indices.iter().map(|&i| &self.samples[i]);
        let refs = || samples().map(|s| &self.references[s.reference]);
        Ok(Batch {
            lr: stack(samples().map(|s| &s.lr))?,
            lr_up: stack(samples().map(|s| &s.lr_up))?,
            hr: stack(samples().map(|s| &s.hr))?,
            ref_hr: stack(refs().map(|r| &r.hr))?,
            ref_degraded: stack(refs().map(|r| &r.degraded))?,
        })
    }
}

/// Concatenates `[1, …]` tensors of equal shape into `[n, …]`.
pub fn stack<'a>(items: impl Iterator<Item = &'a Tensor<f64>>) -> Result<Tensor<f64>> {
    let mut shape_of: Option<Vec<usize>> = None;
    let mut data = Vec::new();
    let mut n = 0;
    for t in items {
        match &shape_of {
            None => shape_of = Some(t.shape().to_vec()),
            Some(s) if s.as_slice() != t.shape() => {
                return Err(shape(format!("cannot stack {:?} with {:?}", s, t.shape())));
            }
            _ => {}
        }
        data.extend_from_slice(t.data());
        n += 1;
    }
    let mut s = shape_of.ok_or_else(|| param("nothing to stack"))?;
    s[0] *= n;
    Ok(Tensor::new(&s, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, CorpusConfig};

    #[test]
    fn corpus_batches() {
        let cfg = CorpusConfig {
            micrographs: 2,
            grid: 2,
            references_per_micrograph: 2,
            ref_patch: 32,
            ..Default::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let set = TrainingSet::from_corpus(&corpus, Split::Train).unwrap();
        assert!(!set.is_empty());
        let b = set.batch(&[0, 0]).unwrap();
        assert_eq!(b.lr.shape(), &[2, 3, 32, 32]);
        assert_eq!(b.hr.shape(), &[2, 3, 128, 128]);
        assert_eq!(b.lr_up.shape(), &[2, 3, 128, 128]);
        assert_eq!(b.ref_hr.shape(), &[2, 3, 32, 32]);
        assert_eq!(b.ref_degraded.shape(), &[2, 3, 32, 32]);
    }
}
