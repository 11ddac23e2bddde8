//! Underperformance detection over throughput samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::JobStats;
use crate::model::{Gbps, Millis};
use crate::store::{StoreError, Txn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    /// Fraction of the allocation below which a sample counts as slow.
    pub theta: f64,
    /// Number of consecutive samples a verdict is based on.
    pub window: usize,
    /// Fraction of the allocation below which a sample counts as idle.
    pub idle_epsilon: f64,
    /// Metrics averaging window passed to the metrics source, seconds.
    pub sample_window_s: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            theta: 0.8,
            window: 3,
            idle_epsilon: 0.01,
            sample_window_s: 10,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err("monitor.theta must be positive".into());
        }
        if self.window == 0 {
            return Err("monitor.window must be >= 1".into());
        }
        if !(self.idle_epsilon >= 0.0 && self.idle_epsilon < self.theta) {
            return Err("monitor.idle_epsilon must be in [0, theta)".into());
        }
        if self.sample_window_s == 0 {
            return Err("monitor.sample_window_s must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub rule_id: String,
    pub t: Millis,
    pub observed_gbps: f64,
    pub allocated_gbps: Gbps,
    /// The metrics source had no data; `observed_gbps` is 0.
    #[serde(default)]
    pub no_data: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Healthy,
    Underperforming,
    Idle,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Healthy => "HEALTHY",
            Verdict::Underperforming => "UNDERPERFORMING",
            Verdict::Idle => "IDLE",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub rule_id: String,
    /// First and last sample time, ms.
    pub window: (Millis, Millis),
    pub samples: usize,
    pub mean_observed_gbps: f64,
    pub allocated_gbps: Gbps,
    pub efficiency: f64,
    pub job_stats: JobStats,
    pub verdict: Verdict,
}

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("need {need} samples, have {have}")]
    InsufficientData { have: usize, need: usize },
    #[error("unknown rule {0}")]
    UnknownRule(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn classify(window: &[FlowSample], cfg: &MonitorConfig) -> Verdict {
    let idle = window.iter().all(|s| {
        s.observed_gbps <= 0.0 || s.observed_gbps < cfg.idle_epsilon * s.allocated_gbps as f64
    });
    if idle {
        return Verdict::Idle;
    }
    let slow = window
        .iter()
        .all(|s| s.observed_gbps < cfg.theta * s.allocated_gbps as f64);
    if slow {
        Verdict::Underperforming
    } else {
        Verdict::Healthy
    }
}

/// Verdict over the last `cfg.window` samples (in time order).
///
/// IDLE when every sample in the window is essentially zero, UNDERPERFORMING
/// when every sample is below `theta` of its allocation, HEALTHY otherwise.
pub fn detect(samples: &[FlowSample], cfg: &MonitorConfig) -> Result<Verdict, MonitorError> {
    if samples.len() < cfg.window || cfg.window == 0 {
        return Err(MonitorError::InsufficientData {
            have: samples.len(),
            need: cfg.window,
        });
    }
    Ok(classify(&samples[samples.len() - cfg.window..], cfg))
}

/// Aggregates a rule's samples with its job statistics. With fewer than
/// `cfg.window` samples the verdict uses all of them; with none it is IDLE.
pub fn build_report(
    rule_id: &str,
    samples: &[FlowSample],
    job_stats: JobStats,
    cfg: &MonitorConfig,
) -> FlowReport {
    let n = samples.len();
    let window = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => (0, 0),
    };
    let mean = if n == 0 {
        0.0
    } else {
        samples.iter().map(|s| s.observed_gbps).sum::<f64>() / n as f64
    };
    let allocated = samples.iter().map(|s| s.allocated_gbps).max().unwrap_or(0);
    let efficiency = if allocated == 0 {
        0.0
    } else {
        mean / allocated as f64
    };
    let verdict = if n == 0 {
        Verdict::Idle
    } else {
        classify(&samples[n.saturating_sub(cfg.window)..], cfg)
    };
    FlowReport {
        rule_id: rule_id.to_string(),
        window,
        samples: n,
        mean_observed_gbps: mean,
        allocated_gbps: allocated,
        efficiency,
        job_stats,
        verdict,
    }
}

/// The persisted report of a finished rule, or a live one for a rule still
/// in flight.
pub fn report(
    tx: &Txn<'_>,
    rule_id: &str,
    cfg: &MonitorConfig,
) -> Result<FlowReport, MonitorError> {
    if let Some(r) = tx.report(rule_id)? {
        return Ok(r);
    }
    if tx.rule(rule_id)?.is_none() {
        return Err(MonitorError::UnknownRule(rule_id.to_string()));
    }
    let samples = tx.samples(rule_id)?;
    let stats = tx
        .job_stats(rule_id)?
        .unwrap_or_else(|| JobStats::empty(rule_id));
    Ok(build_report(rule_id, &samples, stats, cfg))
}
