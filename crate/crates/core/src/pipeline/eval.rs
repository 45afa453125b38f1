//! Side-by-side SSIM/PSNR evaluation of the interpolation baselines and the
//! trained model.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Split, TripletManifest};
use crate::error::{param, Result};
use crate::imagecore::{resample, GrayImage, ResampleKernel};
use crate::metrics::{aggregate, psnr, ssim, MetricReport, SsimParams, Unit};
use crate::ttsr::{Model, PreparedReference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nearest,
    Bicubic,
    Lanczos,
    Ttsr,
    /// HR against itself.
    Oracle,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Nearest,
        Method::Bicubic,
        Method::Lanczos,
        Method::Ttsr,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nearest => "nearest",
            Method::Bicubic => "bicubic",
            Method::Lanczos => "lanczos",
            Method::Ttsr => "ttsr",
            Method::Oracle => "oracle",
        }
    }
}

impl FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| param(format!("unknown method `{s}`")))
    }
}

/// One held-out triplet.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    pub lr: GrayImage,
    pub hr: GrayImage,
    pub ref_ids: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalSet {
    pub items: Vec<EvalItem>,
    pub references: Vec<(String, GrayImage)>,
}

impl EvalSet {
    /// Items of `split` and every reference they list.
    pub fn from_manifest<F>(manifest: &TripletManifest, split: Split, load: F) -> Result<Self>
    where
        F: Fn(&str) -> Result<GrayImage> + Sync,
    {
        let entries: Vec<_> = manifest.entries_in(split).collect();
        let items = entries
            .par_iter()
            .map(|e| {
                Ok(EvalItem {
                    id: e.id.clone(),
                    lr: load(&e.lr_path)?,
                    hr: load(&e.hr_path)?,
                    ref_ids: e.ref_ids.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut wanted: Vec<&str> = entries
            .iter()
            .flat_map(|e| e.ref_ids.iter().map(String::as_str))
            .collect();
        wanted.sort_unstable();
        wanted.dedup();
        let references = wanted
            .par_iter()
            .map(|id| {
                let r = manifest
                    .reference(id)
                    .ok_or_else(|| param(format!("unknown reference `{id}`")))?;
                Ok((id.to_string(), load(&r.path)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { items, references })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodReport {
    pub method: Method,
    pub ssim: MetricReport,
    pub psnr: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<MethodReport>,
    /// Methods skipped for lack of an asset.
    pub warnings: Vec<String>,
}

/// One flattened JSON record.
#[derive(Debug, Clone, Serialize)]
struct JsonRow<'a> {
    method: Method,
    #[serde(flatten)]
    report: &'a MetricReport,
}

impl EvalReport {
    pub fn row(&self, m: Method) -> Option<&MethodReport> {
        self.rows.iter().find(|r| r.method == m)
    }

    /// Plain-text table; `±` is the standard error of the mean.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>18} {:>18}", "method", "SSIM", "PSNR [dB]");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>18} {:>18}",
                r.method.name(),
                r.ssim.display(),
                r.psnr.display()
            );
        }
        if let Some(n) = self.rows.first().map(|r| r.ssim.n) {
            let _ = writeln!(s, "n = {n}; ± is the standard error of the mean");
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }

    /// `{"results": [{method, metric, mean, stderr, n, unit}, …], "warnings": […]}`.
    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<JsonRow> = self
            .rows
            .iter()
            .flat_map(|r| {
                [&r.ssim, &r.psnr].map(|report| JsonRow {
                    method: r.method,
                    report,
                })
            })
            .collect();
        let v = serde_json::json!({ "results": rows, "warnings": self.warnings });
        let mut s = serde_json::to_string_pretty(&v)?;
        s.push('\n');
        Ok(s)
    }
}

/// Super-resolves every item with `method`.
fn predict(
    method: Method,
    item: &EvalItem,
    model: Option<&Model>,
    refs: &HashMap<&str, PreparedReference>,
) -> Result<GrayImage> {
    let kernel = match method {
        Method::Nearest => ResampleKernel::nearest(),
        Method::Bicubic => ResampleKernel::bicubic(),
        Method::Lanczos => ResampleKernel::lanczos(),
        Method::Oracle => return Ok(item.hr.clone()),
        Method::Ttsr => {
            let model = model.expect("checked by the caller");
            let chosen: Vec<&PreparedReference> = item
                .ref_ids
                .iter()
                .filter_map(|id| refs.get(id.as_str()))
                .collect();
            return model.enhance_patch_among(&item.lr, &chosen);
        }
    };
    resample(&item.lr, 4.0, &kernel)
}

/// SSIM and PSNR reports for every requested method. The trained model row
/// is skipped with a warning when no model is given.
pub fn evaluate(set: &EvalSet, methods: &[Method], model: Option<&Model>) -> Result<EvalReport> {
    if set.items.is_empty() {
        return Err(param("the test split is empty"));
    }
    let params = SsimParams::default();
    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    let mut refs = HashMap::new();
    if let (Some(m), true) = (model, methods.contains(&Method::Ttsr)) {
        let prepared = m.prepare_references(&set.references)?;
        for ((id, _), p) in set.references.iter().zip(prepared) {
            refs.insert(id.as_str(), p);
        }
    }
    for &method in methods {
        if method == Method::Ttsr && model.is_none() {
            warnings.push("ttsr skipped: no model weights".to_string());
            continue;
        }
        let scores = set
            .items
            .par_iter()
            .map(|item| {
                let sr = predict(method, item, model, &refs)?;
                Ok((ssim(&sr, &item.hr, &params)?, psnr(&sr, &item.hr, 1.0)?))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        let (s, p): (Vec<f64>, Vec<f64>) = scores.into_iter().unzip();
        rows.push(MethodReport {
            method,
            ssim: aggregate("SSIM", Unit::Dimensionless, &s)?,
            psnr: aggregate("PSNR", Unit::Decibel, &p)?,
        });
    }
    Ok(EvalReport { rows, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_degrade, synth_microstructure, DegradationParams, Microstructure};

    fn set() -> EvalSet {
        let items = (0..4)
            .map(|s| {
                let hr = synth_microstructure(Microstructure::DualPhase, 128, s).unwrap();
                let lr = synth_degrade(&hr, &DegradationParams::default()).unwrap();
                EvalItem {
                    id: format!("i{s}"),
                    lr,
                    hr,
                    ref_ids: vec![],
                }
            })
            .collect();
        EvalSet {
            items,
            references: vec![],
        }
    }

    #[test]
    fn oracle_and_baselines() {
        let r = evaluate(&set(), &Method::ALL, None).unwrap();
        assert_eq!(r.warnings.len(), 1);
        let o = r.row(Method::Oracle).unwrap();
        assert_eq!(o.ssim.mean, 1.0);
        assert_eq!(o.psnr.mean, f64::INFINITY);
        let b = r.row(Method::Bicubic).unwrap().ssim.mean;
        let n = r.row(Method::Nearest).unwrap().ssim.mean;
        assert!(b >= n);
        assert!(r.to_json().unwrap().contains("\"inf\""));
        assert!(r.to_table().contains("bicubic"));
    }

    #[test]
    fn order_independent() {
        let s = set();
        let mut rev = s.clone();
        rev.items.reverse();
        let a = evaluate(&s, &[Method::Bicubic], None).unwrap();
        let b = evaluate(&rev, &[Method::Bicubic], None).unwrap();
        assert_eq!(a.rows[0].ssim.mean.to_bits(), b.rows[0].ssim.mean.to_bits());
        assert_eq!(
            a.rows[0].psnr.stderr.to_bits(),
            b.rows[0].psnr.stderr.to_bits()
        );
    }

    #[test]
    fn empty_split_is_user_error() {
        let e = evaluate(&EvalSet::default(), &Method::ALL, None).unwrap_err();
        assert!(e.is_user_error());
    }
}
