//! Active-transfer count from bandwidth and round-trip time.

use serde::{Deserialize, Serialize};

use crate::model::Gbps;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    /// Upper bound on what one transfer can push, Gbps.
    pub per_transfer_cap_gbps: f64,
    /// TCP window in gigabits; bounds a single stream to window / rtt.
    pub window_gbit: f64,
    pub min_active: u32,
    pub max_active: u32,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            per_transfer_cap_gbps: 2.0,
            window_gbit: 0.5,
            min_active: 2,
            max_active: 500,
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.per_transfer_cap_gbps > 0.0 && self.window_gbit > 0.0) {
            return Err("tuning rates must be positive".into());
        }
        if self.min_active == 0 || self.min_active > self.max_active {
            return Err("tuning requires 1 <= min_active <= max_active".into());
        }
        Ok(())
    }
}

/// Number of concurrent transfers needed to fill `bandwidth_gbps` when each
/// transfer is limited to `min(cap, window / rtt)`.
pub fn tune_transfers(bandwidth_gbps: Gbps, rtt_ms: f64, cfg: &TuningConfig) -> u32 {
    let rtt_s = rtt_ms.max(f64::MIN_POSITIVE) / 1000.0;
    let per_transfer = cfg.per_transfer_cap_gbps.min(cfg.window_gbit / rtt_s);
    let needed = (bandwidth_gbps as f64 / per_transfer).ceil();
    let clamped = needed.clamp(cfg.min_active as f64, cfg.max_active as f64);
    clamped as u32
}
