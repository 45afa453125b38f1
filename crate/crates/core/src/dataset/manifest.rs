use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletEntry {
    pub id: String,
    pub lr_path: String,
    pub hr_path: String,
    /// Candidate references; after reference selection the best is first.
    pub ref_ids: Vec<String>,
    pub split: Option<Split>,
    /// HR-space offset `(dx, dy)` found by realignment.
    pub alignment_offset: (i32, i32),
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub id: String,
    pub path: String,
    pub source: Source,
}

/// Index of a triplet dataset. Paths are relative to the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletManifest {
    pub version: u32,
    pub scale_factor: u32,
    pub lr_patch: u32,
    pub hr_patch: u32,
    pub ref_patch: u32,
    pub seed: u64,
    pub entries: Vec<TripletEntry>,
    pub references: Vec<ReferenceEntry>,
}

impl TripletManifest {
    pub fn new(lr_patch: u32, ref_patch: u32, seed: u64) -> Self {
        Self {
            version: MANIFEST_VERSION,
            scale_factor: 4,
            lr_patch,
            hr_patch: 4 * lr_patch,
            ref_patch,
            seed,
            entries: Vec::new(),
            references: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(param(format!(
                "unsupported manifest version {}",
                self.version
            )));
        }
        if self.hr_patch != self.scale_factor * self.lr_patch {
            return Err(param(format!(
                "hr_patch {} ≠ scale_factor {} × lr_patch {}",
                self.hr_patch, self.scale_factor, self.lr_patch
            )));
        }
        let mut refs = HashSet::new();
        for r in &self.references {
            if !refs.insert(r.id.as_str()) {
                return Err(param(format!("duplicate reference id `{}`", r.id)));
            }
        }
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(param(format!("duplicate entry id `{}`", e.id)));
            }
            if let Some(missing) = e.ref_ids.iter().find(|r| !refs.contains(r.as_str())) {
                return Err(param(format!(
                    "entry `{}` names unknown reference `{missing}`",
                    e.id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &TripletEntry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    pub fn reference(&self, id: &str) -> Option<&ReferenceEntry> {
        self.references.iter().find(|r| r.id == id)
    }

    pub fn split_counts(&self) -> [usize; 3] {
        [Split::Train, Split::Val, Split::Test].map(|s| self.entries_in(s).count())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
        }
    }
}

/// Assigns every entry to train/val/test. Counts are `round(f·n)` for train
/// and val, the remainder is test; which entries land where is a seeded
/// shuffle.
pub fn split(
    manifest: &TripletManifest,
    fractions: SplitFractions,
    seed: u64,
) -> Result<TripletManifest> {
    let n = manifest.entries.len();
    if n == 0 {
        return Err(param("cannot split an empty manifest"));
    }
    let SplitFractions { train, val } = fractions;
    if !(train >= 0.0 && val >= 0.0 && train + val <= 1.0) {
        return Err(param(format!("bad split fractions {train}/{val}")));
    }
    let n_train = ((train * n as f64).round() as usize).min(n);
    let n_val = ((val * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = manifest.clone();
    for (rank, &i) in order.iter().enumerate() {
        out.entries[i].split = Some(if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(n: usize) -> TripletManifest {
        let mut m = TripletManifest::new(32, 96, 1);
        m.references.push(ReferenceEntry {
            id: "r0".into(),
            path: "ref/r0.png".into(),
            source: Source::Synthetic,
        });
        for i in 0..n {
            m.entries.push(TripletEntry {
                id: format!("e{i:04}"),
                lr_path: format!("lr/e{i:04}.png"),
                hr_path: format!("hr/e{i:04}.png"),
                ref_ids: vec!["r0".into()],
                split: None,
                alignment_offset: (i as i32 % 3 - 1, 2),
                source: Source::Synthetic,
            });
        }
        m
    }

    #[test]
    fn split_counts_match_fractions() {
        for (n, want) in [
            (10, [8, 1, 1]),
            (2000, [1600, 200, 200]),
            (1, [1, 0, 0]),
            (7, [6, 1, 0]),
        ] {
            let s = split(&toy(n), SplitFractions::default(), 3).unwrap();
            assert_eq!(s.split_counts(), want, "n = {n}");
            assert!(s.entries.iter().all(|e| e.split.is_some()));
        }
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let m = toy(50);
        let a = split(&m, SplitFractions::default(), 9).unwrap();
        assert_eq!(a, split(&m, SplitFractions::default(), 9).unwrap());
        let b = split(&m, SplitFractions::default(), 10).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.split_counts(), b.split_counts());
    }

    #[test]
    fn empty_split_rejected() {
        assert!(split(&toy(0), SplitFractions::default(), 0).is_err());
    }

    #[test]
    fn validation_catches_dangling_refs() {
        let mut m = toy(2);
        assert!(m.validate().is_ok());
        m.entries[1].ref_ids.push("nope".into());
        assert!(m.validate().is_err());
        let mut m = toy(1);
        m.hr_patch = 100;
        assert!(m.validate().is_err());
    }

    #[test]
    fn json_round_trip_is_byte_exact() {
        let m = split(&toy(5), SplitFractions::default(), 1).unwrap();
        let s = m.to_json().unwrap();
        let back = TripletManifest::from_json(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), s);
        assert!(s.contains("\"split\": \"train\""));
    }
}
