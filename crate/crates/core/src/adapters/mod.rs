//! Contracts for the external systems the orchestrator talks to:
//!
//! * [`RuleSource`] for the data-management system that owns transfer rules,
//! * [`CircuitProvider`] for the SDN service that provisions circuits,
//! * [`TransferTool`] for the file transfer service whose concurrency we tune,
//! * [`MetricsSource`] for host-level throughput metrics.
//!
//! [`mock`] holds deterministic in-process implementations used by tests and
//! the simulator. Bodies on the wire are JSON documents of the types below.

pub mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Endpoint, Gbps};

/// Opaque, monotonically increasing position in the rule event stream.
pub type EventCursor = u64;

/// Upstream metadata of a newly created rule. Only rules with exactly one
/// source and one destination are eligible for circuits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMetadata {
    pub sources: Vec<String>,
    pub destinations: Vec<String>,
    pub priority: u64,
    pub total_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleEventKind {
    New(RuleMetadata),
    PriorityChanged {
        priority: u64,
    },
    Completed,
    /// The rule was deleted upstream before completing.
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleEvent {
    pub seq: EventCursor,
    pub rule_id: String,
    #[serde(flatten)]
    pub kind: RuleEventKind,
}

/// Response to `GET /rules?since=<cursor>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleBatch {
    pub events: Vec<RuleEvent>,
    /// Cursor to pass on the next poll.
    pub cursor: EventCursor,
}

/// Body of `POST /circuits`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitRequest {
    pub src_site: String,
    pub dst_site: String,
    pub src_endpoint: String,
    pub dst_endpoint: String,
    pub bandwidth_gbps: Gbps,
    /// Repeating a create with the same key returns the original circuit.
    pub idempotency_key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProviderStatus {
    Pending,
    Active,
    TornDown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCircuit {
    pub circuit_id: String,
    pub status: ProviderStatus,
    pub bandwidth_gbps: Gbps,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JobStats {
    pub rule_id: String,
    pub finished: u64,
    pub failed: u64,
    pub retried: u64,
    pub avg_file_throughput: f64,
}

impl JobStats {
    pub fn empty(rule_id: impl Into<String>) -> Self {
        JobStats {
            rule_id: rule_id.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("rule source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("unknown site {0}")]
    UnknownSite(String),
    #[error("endpoint {0} is busy")]
    EndpointBusy(String),
    #[error("circuit provider error: {0}")]
    Provider(String),
    #[error("unknown circuit {0}")]
    UnknownCircuit(String),
    #[error("transfer tool unavailable: {0}")]
    ToolUnavailable(String),
    #[error("unknown rule {0}")]
    UnknownRule(String),
    #[error("no metrics for {0}")]
    NoData(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl AdapterError {
    /// Errors worth retrying with backoff.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            AdapterError::SourceUnavailable(_)
                | AdapterError::Provider(_)
                | AdapterError::ToolUnavailable(_)
        )
    }
}

pub type AdapterResult<T> = Result<T, AdapterError>;

pub trait RuleSource: Send + Sync {
    /// Events after `since`, in order. Delivery is at-most-once per cursor:
    /// the caller commits the returned cursor together with the applied
    /// events, so a failed poll or commit redelivers on the next call.
    fn poll(&self, since: EventCursor) -> AdapterResult<RuleBatch>;
}

pub trait CircuitProvider: Send + Sync {
    fn list_endpoints(&self, site: &str) -> AdapterResult<Vec<Endpoint>>;
    fn create(&self, req: &CircuitRequest) -> AdapterResult<String>;
    fn status(&self, circuit_id: &str) -> AdapterResult<ProviderCircuit>;
    fn modify(&self, circuit_id: &str, bandwidth_gbps: Gbps) -> AdapterResult<()>;
    fn teardown(&self, circuit_id: &str) -> AdapterResult<()>;
}

pub trait TransferTool: Send + Sync {
    fn set_active(&self, src_site: &str, dst_site: &str, active: u32) -> AdapterResult<()>;
    fn job_stats(&self, rule_id: &str) -> AdapterResult<JobStats>;
}

pub trait MetricsSource: Send + Sync {
    /// Mean ingress+egress rate on `endpoint` over the trailing window, Gbps.
    fn throughput(&self, endpoint: &str, window_s: u64) -> AdapterResult<f64>;
}

/// The four adapters one orchestrator instance works with.
#[derive(Clone)]
pub struct Adapters {
    pub rules: std::sync::Arc<dyn RuleSource>,
    pub circuits: std::sync::Arc<dyn CircuitProvider>,
    pub transfers: std::sync::Arc<dyn TransferTool>,
    pub metrics: std::sync::Arc<dyn MetricsSource>,
}

impl std::fmt::Debug for Adapters {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Adapters { .. }")
    }
}
