//! Read-only API handlers.
//!
//! Handlers are plain functions over the store returning a status code and
//! a JSON body, so the HTTP layer stays a thin router and the simulator can
//! call them directly. They only read committed state and never touch an
//! adapter, so they return quickly whatever the daemons are doing.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::model::{CircuitStatus, Gbps, RuleState};
use crate::monitor::{self, MonitorConfig, MonitorError};
use crate::orchestrator::site_usage;
use crate::store::{Store, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok<T: Serialize>(body: &T) -> Self {
        ApiResponse {
            status: 200,
            body: serde_json::to_value(body).expect("response serializes"),
        }
    }

    fn error(status: u16, error: &str, detail: Value) -> Self {
        let mut body = json!({ "error": error });
        if let (Some(obj), Value::Object(extra)) = (body.as_object_mut(), detail) {
            obj.extend(extra);
        }
        ApiResponse { status, body }
    }

    fn internal(e: StoreError) -> Self {
        Self::error(500, "StoreError", json!({ "message": e.to_string() }))
    }
}

/// Body of a successful `GET /api/v1/allocation/{rule_id}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointAllocation {
    pub rule_id: String,
    pub source_endpoint: String,
    pub dest_endpoint: String,
    pub state: RuleState,
}

/// Endpoints pre-allocated to a rule. 404 for an unknown rule, 409 while
/// the rule has no endpoints (not yet allocated, or released after failure
/// or cancellation).
pub fn allocation(store: &Store, rule_id: &str) -> ApiResponse {
    let rule = match store.read(|tx| tx.rule(rule_id)) {
        Ok(r) => r,
        Err(e) => return ApiResponse::internal(e),
    };
    let Some(rule) = rule else {
        return ApiResponse::error(404, "UnknownRule", json!({ "rule_id": rule_id }));
    };
    match (&rule.src_endpoint, &rule.dst_endpoint) {
        (Some(src), Some(dst)) => ApiResponse::ok(&EndpointAllocation {
            rule_id: rule.rule_id.clone(),
            source_endpoint: src.clone(),
            dest_endpoint: dst.clone(),
            state: rule.state,
        }),
        _ => ApiResponse::error(
            409,
            "NotYetAllocated",
            json!({ "rule_id": rule_id, "state": rule.state }),
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleStatus {
    pub rule_id: String,
    pub src: String,
    pub dst: String,
    pub priority: u64,
    pub state: RuleState,
    pub allocated_gbps: Option<Gbps>,
    pub circuit_id: Option<String>,
    pub circuit_status: Option<CircuitStatus>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteStatus {
    pub name: String,
    pub capacity_gbps: Gbps,
    /// Bandwidth held at the site by circuits not yet torn down.
    pub allocated_gbps: Gbps,
    pub free_endpoints: usize,
    pub total_endpoints: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusDoc {
    pub rules: Vec<RuleStatus>,
    pub sites: Vec<SiteStatus>,
}

/// Every non-terminal rule plus a per-site summary, from one read
/// transaction.
pub fn status_doc(store: &Store) -> Result<StatusDoc, StoreError> {
    store.read(|tx| {
        let circuits = tx.circuits()?;
        let usage = site_usage(&circuits);
        let rules = tx
            .rules()?
            .into_iter()
            .filter(|r| !r.state.is_terminal())
            .map(|r| {
                let circuit = r
                    .circuit_id
                    .as_deref()
                    .and_then(|id| circuits.iter().find(|c| c.circuit_id == id));
                RuleStatus {
                    circuit_status: circuit.map(|c| c.status),
                    rule_id: r.rule_id,
                    src: r.src,
                    dst: r.dst,
                    priority: r.priority,
                    state: r.state,
                    allocated_gbps: r.allocated_gbps,
                    circuit_id: r.circuit_id,
                }
            })
            .collect();
        let sites = tx
            .sites()?
            .into_iter()
            .map(|s| SiteStatus {
                allocated_gbps: usage.get(&s.name).copied().unwrap_or(0),
                free_endpoints: s.endpoints.iter().filter(|e| e.is_free()).count(),
                total_endpoints: s.endpoints.len(),
                capacity_gbps: s.port_capacity,
                name: s.name,
            })
            .collect();
        Ok(StatusDoc { rules, sites })
    })
}

pub fn status(store: &Store) -> ApiResponse {
    match status_doc(store) {
        Ok(doc) => ApiResponse::ok(&doc),
        Err(e) => ApiResponse::internal(e),
    }
}

/// The flow report of a rule: the persisted one once it finished, a live
/// aggregate before that.
pub fn report(store: &Store, rule_id: &str, cfg: &MonitorConfig) -> ApiResponse {
    match store.read(|tx| {
        Ok(match monitor::report(tx, rule_id, cfg) {
            Ok(r) => Ok(r),
            Err(MonitorError::Store(e)) => return Err(e),
            Err(e) => Err(e),
        })
    }) {
        Ok(Ok(r)) => ApiResponse::ok(&r),
        Ok(Err(_)) => ApiResponse::error(404, "UnknownRule", json!({ "rule_id": rule_id })),
        Err(e) => ApiResponse::internal(e),
    }
}

/// Plain-text rendering of a status document.
pub fn render_status(doc: &StatusDoc) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:<12} {:<12} {:>4} {:<13} {:>6} {:<10}",
        "RULE", "SRC", "DST", "PRIO", "STATE", "GBPS", "CIRCUIT"
    );
    for r in &doc.rules {
        let _ = writeln!(
            out,
            "{:<14} {:<12} {:<12} {:>4} {:<13} {:>6} {:<10}",
            r.rule_id,
            r.src,
            r.dst,
            r.priority,
            r.state.as_str(),
            r.allocated_gbps.map_or("-".to_string(), |b| b.to_string()),
            r.circuit_status.map_or("-", |s| s.as_str()),
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<14} {:>8} {:>9} {:>9}",
        "SITE", "CAPACITY", "ALLOCATED", "FREE EPS"
    );
    for s in &doc.sites {
        let _ = writeln!(
            out,
            "{:<14} {:>8} {:>9} {:>5}/{:<3}",
            s.name, s.capacity_gbps, s.allocated_gbps, s.free_endpoints, s.total_endpoints
        );
    }
    out
}
