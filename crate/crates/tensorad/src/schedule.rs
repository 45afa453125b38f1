use crate::error::{Result, TensorError};

/// Triangular cyclic learning rate: ramps linearly from `base_lr` up to
/// `max_lr` over the first half of each cycle and back down over the second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclicLr {
    base_lr: f64,
    max_lr: f64,
    cycle_length: u64,
}

impl CyclicLr {
    pub fn new(base_lr: f64, max_lr: f64, cycle_length: u64) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr <= max_lr) {
            return Err(TensorError::Invalid(format!(
                "cyclic lr needs 0 < base_lr <= max_lr, got {base_lr} / {max_lr}"
            )));
        }
        if cycle_length < 2 {
            return Err(TensorError::Invalid(format!(
                "cycle length must be at least 2, got {cycle_length}"
            )));
        }
        Ok(Self {
            base_lr,
            max_lr,
            cycle_length,
        })
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub fn max_lr(&self) -> f64 {
        self.max_lr
    }

    pub fn cycle_length(&self) -> u64 {
        self.cycle_length
    }

    pub fn lr(&self, step: u64) -> f64 {
        let pos = (step % self.cycle_length) as f64;
        let half = self.cycle_length as f64 / 2.0;
        let frac = if pos <= half {
            pos / half
        } else {
            (self.cycle_length as f64 - pos) / half
        };
        self.base_lr + (self.max_lr - self.base_lr) * frac
    }
}
