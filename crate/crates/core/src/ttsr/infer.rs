//! Trained model: weights I/O, reference selection and super-resolution.

use std::path::Path;

use rayon::prelude::*;
use semsr_tensorad::{DType, Element, Graph, ParamSet, Tensor, WeightsFile};

use super::attention::cosine_similarity;
use super::config::ModelConfig;
use super::data::{stack, ReferenceTensors};
use super::model::{
    generator_forward, init_critic, init_generator, lte_forward, ttsr_forward, upsample_bicubic,
};
use crate::dataset::TripletManifest;
use crate::error::{param, Error, Result};
use crate::imagecore::{from_normalized, to_normalized, GrayImage, ImageTensor};

/// Side of the pooled grid the selector compares.
pub const DESCRIPTOR_GRID: usize = 8;

/// Texture extractor, generator and critic weights (`lte.*`, `gen.*`,
/// `disc.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

/// A reference ready for selection and transfer.
#[derive(Debug, Clone)]
pub struct PreparedReference {
    pub tensors: ReferenceTensors,
    /// Selector feature vector of the degraded reference.
    pub descriptor: Vec<f64>,
}

impl Model {
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = init_generator(config);
        params.extend_from(&init_critic(config));
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let config = infer_config(&params)?;
        let expected = Self::init(&config)?.params;
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Config(format!(
                        "weight `{name}` has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Config(format!("weights lack `{name}`"))),
            }
        }
        Ok(Self {
            config,
            params: params_matching(&params, &expected),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        WeightsFile::from_params(&self.params, DType::F64).to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_params(WeightsFile::from_bytes(bytes)?.to_params())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Pooled deepest texture features of `x` (`[1, 3, h, w]`), flattened.
    fn descriptor(&self, x: &Tensor<f64>) -> Result<Vec<f64>> {
        let mut g = Graph::<f64>::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let levels = lte_forward(&mut g, &p, xv)?;
        Ok(adaptive_avg_pool(g.value(levels[2]), DESCRIPTOR_GRID))
    }

    pub fn prepare_reference(
        &self,
        id: impl Into<String>,
        img: &GrayImage,
    ) -> Result<PreparedReference> {
        let tensors = ReferenceTensors::from_image(id, img)?;
        let descriptor = self.descriptor(&tensors.degraded)?;
        Ok(PreparedReference {
            tensors,
            descriptor,
        })
    }

    pub fn prepare_references(
        &self,
        refs: &[(String, GrayImage)],
    ) -> Result<Vec<PreparedReference>> {
        refs.par_iter()
            .map(|(id, img)| self.prepare_reference(id.clone(), img))
            .collect()
    }

    /// Selector features of an LR patch, taken from its bicubic ×4.
    pub fn lr_descriptor(&self, lr: &GrayImage) -> Result<Vec<f64>> {
        let up = upsample_bicubic(&to_normalized(lr).to_tensor(), 4)?;
        self.descriptor(&up)
    }

    /// Index and cosine similarity of the most similar reference; ties go to
    /// the lowest index.
    pub fn select_reference(
        &self,
        lr: &GrayImage,
        refs: &[PreparedReference],
    ) -> Result<(usize, f64)> {
        let v = self.lr_descriptor(lr)?;
        select_by_descriptor(&v, refs.iter().map(|r| r.descriptor.as_slice()))
    }

    /// Super-resolves `[n, 3, h, w]` LR tensors against one reference,
    /// computing in `T`.
    pub fn super_resolve<T: Element>(
        &self,
        lr: &Tensor<f64>,
        reference: &ReferenceTensors,
    ) -> Result<Tensor<f64>> {
        let [n, _, _, _] = lr.dims4("super_resolve")?;
        let mut g = Graph::<T>::new();
        let p = self.params.bind(&mut g, false);
        let up = upsample_bicubic(lr, 4)?;
        let rh = stack(std::iter::repeat_n(&reference.hr, n))?;
        let rd = stack(std::iter::repeat_n(&reference.degraded, n))?;
        let [lr, up, rh, rd] = [lr, &up, &rh, &rd].map(|t| g.constant(t.cast::<T>()));
        let f = ttsr_forward(&mut g, &p, lr, up, rh, rd, self.config.res_blocks)?;
        Ok(g.value(f.sr).cast::<f64>())
    }

    /// The generator with the texture branch switched off.
    pub fn super_resolve_backbone<T: Element>(&self, lr: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut g = Graph::<T>::new();
        let p = self.params.bind(&mut g, false);
        let up = upsample_bicubic(lr, 4)?;
        let (lr, up) = (g.constant(lr.cast::<T>()), g.constant(up.cast::<T>()));
        let sr = generator_forward(&mut g, &p, lr, up, None, self.config.res_blocks)?;
        Ok(g.value(sr).cast::<f64>())
    }

    /// Selects a reference for `lr` and super-resolves it in single
    /// precision.
    pub fn enhance_patch(&self, lr: &GrayImage, refs: &[PreparedReference]) -> Result<GrayImage> {
        self.enhance_patch_among(lr, &refs.iter().collect::<Vec<_>>())
    }

    /// [`Model::enhance_patch`] over borrowed references.
    pub fn enhance_patch_among(
        &self,
        lr: &GrayImage,
        refs: &[&PreparedReference],
    ) -> Result<GrayImage> {
        if refs.is_empty() {
            return Err(Error::Config("no reference images".into()));
        }
        let v = self.lr_descriptor(lr)?;
        let (i, _) = select_by_descriptor(&v, refs.iter().map(|r| r.descriptor.as_slice()))?;
        let sr = self.super_resolve::<f32>(&to_normalized(lr).to_tensor(), &refs[i].tensors)?;
        from_normalized(&ImageTensor::from_batch(&sr, 0)?)
    }
}

fn params_matching(all: &ParamSet, template: &ParamSet) -> ParamSet {
    let mut out = ParamSet::new();
    for (name, _) in template.iter() {
        out.insert(name, all.get(name).expect("checked by the caller").clone());
    }
    out
}

/// Recovers the architecture from weight shapes.
pub fn infer_config(params: &ParamSet) -> Result<ModelConfig> {
    let dim = |name: &str, axis: usize| -> Result<usize> {
        params
            .get(name)
            .and_then(|t| t.shape().get(axis).copied())
            .ok_or_else(|| Error::Config(format!("weights lack `{name}`")))
    };
    let lte_widths = [
        dim("lte.conv1.w", 0)?,
        dim("lte.conv3.w", 0)?,
        dim("lte.conv5.w", 0)?,
    ];
    let features = dim("gen.head.w", 0)?;
    let res_blocks = (0..)
        .take_while(|i| params.contains(&format!("gen.res{i}.c1.w")))
        .count();
    let critic_width = dim("disc.c1.w", 0)?;
    let fc = dim("disc.fc.w", 0)?;
    let side = ((fc / (4 * critic_width)) as f64).sqrt().round() as usize;
    if 4 * critic_width * side * side != fc {
        return Err(Error::Config(format!(
            "critic dense layer of {fc} inputs fits no patch size"
        )));
    }
    let defaults = ModelConfig::default();
    let config = ModelConfig {
        lte_widths,
        features,
        res_blocks,
        perceptual_widths: defaults.perceptual_widths,
        critic_width,
        hr_patch: 32 * side,
        init_seed: defaults.init_seed,
    };
    config.validate()?;
    Ok(config)
}

/// Averages each channel of `[1, c, h, w]` over a `grid × grid` partition
/// with boundaries at `floor(i·h/grid)` and `ceil((i+1)·h/grid)`.
pub fn adaptive_avg_pool(t: &Tensor<f64>, grid: usize) -> Vec<f64> {
    let s = t.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let bounds = |i: usize, len: usize| (i * len / grid, ((i + 1) * len).div_ceil(grid));
    let mut out = Vec::with_capacity(c * grid * grid);
    for plane in t.data().chunks(h * w).take(c) {
        for gy in 0..grid {
            let (y0, y1) = bounds(gy, h);
            for gx in 0..grid {
                let (x0, x1) = bounds(gx, w);
                let mut sum = 0.0;
                for y in y0..y1 {
                    sum += plane[y * w + x0..y * w + x1].iter().sum::<f64>();
                }
                out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    out
}

/// Argmax of cosine similarity between `v` and each candidate.
pub fn select_by_descriptor<'a>(
    v: &[f64],
    candidates: impl Iterator<Item = &'a [f64]>,
) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, w) in candidates.enumerate() {
        let c = cosine_similarity(v, w)?;
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((i, c));
        }
    }
    best.ok_or_else(|| param("empty reference stack"))
}

/// Reorders every entry's `ref_ids` so the most similar reference comes
/// first; the rest keep their order.
pub fn select_references<F>(
    model: &Model,
    manifest: &TripletManifest,
    load: F,
) -> Result<TripletManifest>
where
    F: Fn(&str) -> Result<GrayImage> + Sync,
{
    let mut ids: Vec<&str> = manifest.references.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    let prepared: Vec<(&str, Vec<f64>)> = ids
        .par_iter()
        .map(|id| {
            let entry = manifest.reference(id).expect("listed above");
            let img = load(&entry.path)?;
            Ok((*id, model.prepare_reference(*id, &img)?.descriptor))
        })
        .collect::<Result<_>>()?;
    let lookup = |id: &str| -> Result<&[f64]> {
        prepared
            .binary_search_by(|(k, _)| k.cmp(&id))
            .map(|i| prepared[i].1.as_slice())
            .map_err(|_| param(format!("unknown reference `{id}`")))
    };
    let entries = manifest
        .entries
        .par_iter()
        .map(|e| {
            let v = model.lr_descriptor(&load(&e.lr_path)?)?;
            let descs = e
                .ref_ids
                .iter()
                .map(|id| lookup(id))
                .collect::<Result<Vec<_>>>()?;
            let (best, _) = select_by_descriptor(&v, descs.into_iter())?;
            let mut e = e.clone();
            let chosen = e.ref_ids.remove(best);
            e.ref_ids.insert(0, chosen);
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = manifest.clone();
    out.entries = entries;
    Ok(out)
}
