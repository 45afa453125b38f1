//! Time model for scan-enhance-rescan sessions.
//!
//! Scanning the whole area at low resolution costs `1/f²` of a full
//! high-resolution scan (`f = 4` here, hence `1/16`), and every region of
//! interest is then rescanned at full resolution:
//! `t_SR / t_HR = 1/16 + A_interest / A_total`.

use serde::{Deserialize, Serialize};

use crate::dataset::AcquisitionSpec;
use crate::error::{param, Result};

/// Resolution factor per axis between the two scans.
pub const FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    EnhanceFirst,
    DirectHr,
}

/// Areas are in µm², times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescanPlan {
    pub a_total: f64,
    pub a_interest: f64,
    pub dwell_us: f64,
    pub pixel_size_nm: f64,
    /// HR scan window, pixels per axis.
    pub hr_window: usize,
    pub lr_window: usize,
    /// One HR window and one LR window over the same field of view.
    pub t_hr_window: f64,
    pub t_lr_window: f64,
    /// Whole area at HR, and scan-enhance-rescan.
    pub t_hr: f64,
    pub t_sr: f64,
    pub ratio: f64,
    pub decision: Decision,
}

/// `1/16 + a_interest/a_total`.
pub fn time_ratio(a_total: f64, a_interest: f64) -> f64 {
    1.0 / (FACTOR * FACTOR) as f64 + a_interest / a_total
}

pub fn plan_rescan(a_total: f64, a_interest: f64, acq: &AcquisitionSpec) -> Result<RescanPlan> {
    acq.validate()?;
    if !(a_total > 0.0 && a_total.is_finite()) {
        return Err(param(format!("total area {a_total} must be positive")));
    }
    if !(a_interest >= 0.0) || a_interest > a_total {
        return Err(param(format!(
            "area of interest {a_interest} must lie in [0, {a_total}]"
        )));
    }
    let ratio = time_ratio(a_total, a_interest);
    let dwell = acq.dwell_us * 1e-6;
    let px_um = acq.pixel_size_nm * 1e-3;
    let t_hr = dwell * a_total / (px_um * px_um);
    let lr_window = acq.window / FACTOR;
    Ok(RescanPlan {
        a_total,
        a_interest,
        dwell_us: acq.dwell_us,
        pixel_size_nm: acq.pixel_size_nm,
        hr_window: acq.window,
        lr_window,
        t_hr_window: dwell * (acq.window * acq.window) as f64,
        t_lr_window: dwell * (lr_window * lr_window) as f64,
        t_hr,
        t_sr: t_hr * ratio,
        ratio,
        decision: if ratio < 1.0 {
            Decision::EnhanceFirst
        } else {
            Decision::DirectHr
        },
    })
}

impl RescanPlan {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
