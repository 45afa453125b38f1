//! Triplet curation: manifests and splits, patch extraction, SSIM-driven
//! realignment, and synthetic micrographs standing in for acquisition.

mod align;
mod curate;
mod manifest;
mod synth;

pub use align::{realign_pair, Alignment, DEFAULT_SEARCH_RADIUS};
pub use curate::{
    extract_patches, extract_reference_patches, generate_corpus, Corpus, CorpusConfig, PatchPair,
};
pub use manifest::{
    split, ReferenceEntry, Source, Split, SplitFractions, TripletEntry, TripletManifest,
    MANIFEST_FILE, MANIFEST_VERSION,
};
pub use synth::{
    synth_degrade, synth_microstructure, DegradationParams, Microstructure, DUALPHASE_FRACTION,
    ISLAND_LEVEL, LAMELLA_PERIOD, MATRIX_LEVEL, MIN_SYNTH_SIZE,
};

use serde::{Deserialize, Serialize};

/// Scan parameters of one acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub dwell_us: f64,
    pub pixel_size_nm: f64,
    /// Pixels per axis of the scan window.
    pub window: usize,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        Self {
            dwell_us: 32.0,
            pixel_size_nm: 32.5,
            window: 4096,
        }
    }
}

impl AcquisitionSpec {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.dwell_us > 0.0 && self.pixel_size_nm > 0.0 && self.window > 0) {
            return Err(crate::error::param(
                "dwell time, pixel size and window must be positive",
            ));
        }
        Ok(())
    }
}
