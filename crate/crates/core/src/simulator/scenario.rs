//! Scenario documents: the sites plus a timeline of events.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{load_document, ConfigError};
use crate::model::{Gbps, Site};
use crate::monitor::MonitorConfig;
use crate::orchestrator::{CrashPoint, OrchestratorConfig, RttTable, TuningConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSite {
    pub name: String,
    pub capacity_gbps: Gbps,
    /// Number of circuit endpoints; named `<site>-ep<N>`.
    #[serde(default = "default_endpoints")]
    pub endpoints: usize,
}

fn default_endpoints() -> usize {
    4
}

impl ScenarioSite {
    pub fn endpoint_names(&self) -> Vec<String> {
        (1..=self.endpoints)
            .map(|i| format!("{}-ep{i}", self.name.to_lowercase()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RttEntry {
    pub a: String,
    pub b: String,
    pub rtt_ms: f64,
}

/// Parameters of the throughput model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Rate one active transfer achieves, Gbps.
    pub per_transfer_rate_gbps: f64,
    /// Multiplicative noise is uniform in [-noise_fraction, +noise_fraction].
    pub noise_fraction: f64,
    pub file_size_bytes: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            per_transfer_rate_gbps: 2.0,
            noise_fraction: 0.0,
            file_size_bytes: 1_000_000_000,
        }
    }
}

/// Orchestrator settings a scenario may override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSettings {
    pub granularity_gbps: Gbps,
    pub reuse_window_s: u64,
    pub max_retries: u32,
    pub provision_delay_s: u64,
    pub default_rtt_ms: f64,
}

impl Default for ScenarioSettings {
    fn default() -> Self {
        ScenarioSettings {
            granularity_gbps: 5,
            reuse_window_s: 600,
            max_retries: 3,
            provision_delay_s: 2,
            default_rtt_ms: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTarget {
    RuleSource,
    CircuitProvider,
    TransferTool,
    Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum SimEventKind {
    AddRule {
        rule_id: String,
        src: String,
        dst: String,
        priority: u64,
        total_bytes: u64,
        /// Additional sources; a rule with any is not point-to-point.
        #[serde(default)]
        extra_sources: Vec<String>,
    },
    SetPriority {
        rule_id: String,
        priority: u64,
    },
    CancelRule {
        rule_id: String,
    },
    /// The next `count` calls to `adapter` fail.
    Fault {
        adapter: FaultTarget,
        count: u32,
    },
    /// Scales a rule's achieved rate by `factor` from now on.
    MetricsScale {
        rule_id: String,
        factor: f64,
    },
    /// The transfer tool reports `count` failed (and retried) file
    /// transfers for the rule.
    JobFailures {
        rule_id: String,
        count: u64,
    },
    /// Drops the orchestrator and reopens it from the store.
    Restart,
    /// Arms a crash inside the orchestrator; the simulator restarts it when
    /// the crash fires.
    Crash {
        point: CrashPoint,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    /// Virtual time in seconds.
    pub t: u64,
    #[serde(flatten)]
    pub kind: SimEventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Stop time in seconds; without it the run continues until every rule
    /// is terminal and every circuit is gone.
    #[serde(default)]
    pub until_s: Option<u64>,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub orchestrator: ScenarioSettings,
    #[serde(default = "sim_monitor")]
    pub monitor: MonitorConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub sites: Vec<ScenarioSite>,
    #[serde(default)]
    pub rtt: Vec<RttEntry>,
    #[serde(default)]
    pub events: Vec<SimEvent>,
}

/// Monitoring defaults for 1 s ticks: one-tick metric windows.
fn sim_monitor() -> MonitorConfig {
    MonitorConfig {
        sample_window_s: 1,
        ..MonitorConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid scenario: {0}")]
pub struct ScenarioInvalid(pub String);

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ConfigError> {
        let sc: Scenario = load_document(path)?;
        sc.validate().map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            message: e.0,
        })?;
        Ok(sc)
    }

    pub fn empty() -> Scenario {
        Scenario {
            name: None,
            seed: 0,
            until_s: None,
            model: ModelParams::default(),
            orchestrator: ScenarioSettings::default(),
            monitor: sim_monitor(),
            tuning: TuningConfig::default(),
            sites: Vec::new(),
            rtt: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioInvalid> {
        let bad = |m: String| Err(ScenarioInvalid(m));
        let mut names = BTreeSet::new();
        for s in &self.sites {
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate site {}", s.name));
            }
        }
        let known = |s: &str| names.contains(s);
        for r in &self.rtt {
            if !known(&r.a) || !known(&r.b) {
                return bad(format!("rtt entry {}-{} names an unknown site", r.a, r.b));
            }
            if r.rtt_ms.is_nan() || r.rtt_ms <= 0.0 {
                return bad(format!("rtt entry {}-{} must be positive", r.a, r.b));
            }
        }
        if self.model.per_transfer_rate_gbps.is_nan() || self.model.per_transfer_rate_gbps <= 0.0 {
            return bad("model.per_transfer_rate_gbps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.model.noise_fraction) {
            return bad("model.noise_fraction must be in [0, 1)".into());
        }
        if self.model.file_size_bytes == 0 {
            return bad("model.file_size_bytes must be positive".into());
        }
        self.orchestrator_config()
            .validate()
            .map_err(ScenarioInvalid)?;

        let mut last = 0;
        let mut rules = BTreeSet::new();
        for (i, ev) in self.events.iter().enumerate() {
            if ev.t < last {
                return bad(format!("event {i} at t={} is before its predecessor", ev.t));
            }
            last = ev.t;
            match &ev.kind {
                SimEventKind::AddRule {
                    rule_id,
                    src,
                    dst,
                    priority,
                    extra_sources,
                    ..
                } => {
                    for site in std::iter::once(src).chain([dst]).chain(extra_sources) {
                        if !known(site) {
                            return bad(format!("event {i}: unknown site {site}"));
                        }
                    }
                    if *priority == 0 {
                        return bad(format!("event {i}: priority must be >= 1"));
                    }
                    if !rules.insert(rule_id.as_str()) {
                        return bad(format!("event {i}: rule {rule_id} added twice"));
                    }
                }
                SimEventKind::SetPriority { rule_id, priority } => {
                    if *priority == 0 {
                        return bad(format!("event {i}: priority must be >= 1"));
                    }
                    if !rules.contains(rule_id.as_str()) {
                        return bad(format!("event {i}: rule {rule_id} not added yet"));
                    }
                }
                SimEventKind::CancelRule { rule_id }
                | SimEventKind::JobFailures { rule_id, .. } => {
                    if !rules.contains(rule_id.as_str()) {
                        return bad(format!("event {i}: rule {rule_id} not added yet"));
                    }
                }
                SimEventKind::MetricsScale { rule_id, factor } => {
                    if !rules.contains(rule_id.as_str()) {
                        return bad(format!("event {i}: rule {rule_id} not added yet"));
                    }
                    if !(0.0..=1.0).contains(factor) {
                        return bad(format!("event {i}: factor must be in [0, 1]"));
                    }
                }
                SimEventKind::Fault { .. } | SimEventKind::Restart | SimEventKind::Crash { .. } => {
                }
            }
        }
        Ok(())
    }

    pub fn sites(&self) -> Vec<Site> {
        self.sites
            .iter()
            .map(|s| Site::new(s.name.clone(), s.capacity_gbps).with_endpoints(s.endpoint_names()))
            .collect()
    }

    pub fn orchestrator_config(&self) -> OrchestratorConfig {
        let o = &self.orchestrator;
        let mut rtt = RttTable::default();
        rtt.default_ms = o.default_rtt_ms;
        for r in &self.rtt {
            rtt.set(&r.a, &r.b, r.rtt_ms);
        }
        OrchestratorConfig {
            granularity_gbps: o.granularity_gbps,
            poll_interval_ms: 1_000,
            reuse_window_s: o.reuse_window_s,
            max_retries: o.max_retries,
            monitor: self.monitor.clone(),
            tuning: self.tuning.clone(),
            rtt,
            ..OrchestratorConfig::default()
        }
    }
}
