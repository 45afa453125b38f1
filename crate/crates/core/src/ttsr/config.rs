use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Architecture sizes. The defaults are the desk-scale widths; the full-scale
/// texture extractor uses `(64, 128, 256)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels at the three texture-extractor taps (1×, 1/2×, 1/4×).
    pub lte_widths: [usize; 3],
    /// Generator feature width at LR resolution.
    pub features: usize,
    pub res_blocks: usize,
    /// Channel widths of the frozen perceptual extractor (shallow, deep).
    pub perceptual_widths: [usize; 2],
    pub critic_width: usize,
    /// HR side length the critic sees; it fixes the critic's dense layer.
    pub hr_patch: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lte_widths: [4, 8, 16],
            features: 16,
            res_blocks: 8,
            perceptual_widths: [8, 16],
            critic_width: 8,
            hr_patch: 128,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lte_widths.iter().any(|&w| w == 0) || self.features < 2 || self.features % 2 != 0 {
            return Err(param("widths must be positive and `features` even"));
        }
        if self.hr_patch % 32 != 0 || self.hr_patch == 0 {
            return Err(param(format!(
                "hr_patch {} must be a multiple of 32",
                self.hr_patch
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub per: f64,
    pub adv: f64,
    /// Gradient-penalty coefficient of the critic loss.
    pub gp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            per: 1e-2,
            adv: 1e-3,
            gp: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrConfig {
    pub base: f64,
    pub max: f64,
    pub cycle: u64,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            base: 1e-5,
            max: 1e-4,
            cycle: 2000,
        }
    }
}

/// Versioned training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub version: u32,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub steps: u64,
    /// Fraction of `steps` trained on the reconstruction loss alone.
    pub stage_switch: f64,
    pub batch_size: usize,
    pub lr: LrConfig,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            steps: 5000,
            stage_switch: 0.6,
            batch_size: 4,
            lr: LrConfig::default(),
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// First step of the second stage.
    pub fn switch_step(&self) -> u64 {
        (self.stage_switch * self.steps as f64).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(param(format!(
                "unsupported config version {}",
                self.version
            )));
        }
        self.model.validate()?;
        if !(0.0..=1.0).contains(&self.stage_switch) {
            return Err(param("stage_switch must be in [0, 1]"));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(param("batch_size and steps must be positive"));
        }
        let w = &self.loss;
        if [w.rec, w.per, w.adv, w.gp].iter().any(|v| !(*v >= 0.0)) {
            return Err(param("loss weights must be ≥ 0"));
        }
        semsr_tensorad::CyclicLr::new(self.lr.base, self.lr.max, self.lr.cycle)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}
