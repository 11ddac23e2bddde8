//! Domain types and the transfer-rule state machine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bandwidth in Gbps.
pub type Gbps = u64;

/// Timestamp in integer milliseconds.
pub type Millis = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Site {
    pub name: String,
    pub port_capacity: Gbps,
    pub endpoints: Vec<Endpoint>,
}

impl Site {
    pub fn new(name: impl Into<String>, port_capacity: Gbps) -> Self {
        Site {
            name: name.into(),
            port_capacity,
            endpoints: Vec::new(),
        }
    }

    pub fn with_endpoints<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let site = self.name.clone();
        self.endpoints
            .extend(names.into_iter().map(|n| Endpoint::new(n, site.clone())));
        self
    }

    /// Checks that endpoint names are unique within the site.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = std::collections::BTreeSet::new();
        for ep in &self.endpoints {
            if ep.site != self.name {
                return Err(ModelError::Invalid(format!(
                    "endpoint {} belongs to site {}, not {}",
                    ep.name, ep.site, self.name
                )));
            }
            if !seen.insert(ep.name.as_str()) {
                return Err(ModelError::Invalid(format!(
                    "duplicate endpoint {} at site {}",
                    ep.name, self.name
                )));
            }
        }
        Ok(())
    }
}

/// A circuit-attachable storage endpoint.
///
/// An endpoint is bound to at most one rule and at most one circuit. After a
/// rule finishes, its endpoints stay bound to the (stale) circuit until the
/// circuit is reused or reaped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub name: String,
    pub site: String,
    #[serde(default)]
    pub in_use_by: Option<String>,
    #[serde(default)]
    pub circuit_id: Option<String>,
}

impl Endpoint {
    pub fn new(name: impl Into<String>, site: impl Into<String>) -> Self {
        Endpoint {
            name: name.into(),
            site: site.into(),
            in_use_by: None,
            circuit_id: None,
        }
    }

    pub fn is_free(&self) -> bool {
        self.in_use_by.is_none() && self.circuit_id.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleState {
    Initialized,
    Allocated,
    Decided,
    Provisioning,
    Provisioned,
    Modifying,
    Finished,
    Failed,
    Cancelled,
}

impl RuleState {
    pub const ALL: [RuleState; 9] = [
        RuleState::Initialized,
        RuleState::Allocated,
        RuleState::Decided,
        RuleState::Provisioning,
        RuleState::Provisioned,
        RuleState::Modifying,
        RuleState::Finished,
        RuleState::Failed,
        RuleState::Cancelled,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            RuleState::Finished | RuleState::Failed | RuleState::Cancelled
        )
    }

    /// States whose rules take part in bandwidth decisions.
    pub fn is_active(self) -> bool {
        matches!(
            self,
            RuleState::Allocated
                | RuleState::Decided
                | RuleState::Provisioning
                | RuleState::Provisioned
                | RuleState::Modifying
        )
    }

    pub fn carries_allocation(self) -> bool {
        matches!(
            self,
            RuleState::Decided
                | RuleState::Provisioning
                | RuleState::Provisioned
                | RuleState::Modifying
        )
    }

    pub fn carries_endpoints(self) -> bool {
        matches!(
            self,
            RuleState::Allocated
                | RuleState::Decided
                | RuleState::Provisioning
                | RuleState::Provisioned
                | RuleState::Modifying
                | RuleState::Finished
        )
    }

    /// The legal-transition relation.
    pub fn can_transition_to(self, target: RuleState) -> bool {
        use RuleState::*;
        match (self, target) {
            (Initialized, Allocated)
            | (Allocated, Decided)
            | (Decided, Provisioning)
            | (Provisioning, Provisioned)
            | (Provisioned, Modifying)
            | (Modifying, Provisioned)
            | (Provisioned, Finished)
            | (Failed, Initialized) => true,
            (from, Failed | Cancelled) => !from.is_terminal(),
            _ => false,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RuleState::Initialized => "INITIALIZED",
            RuleState::Allocated => "ALLOCATED",
            RuleState::Decided => "DECIDED",
            RuleState::Provisioning => "PROVISIONING",
            RuleState::Provisioned => "PROVISIONED",
            RuleState::Modifying => "MODIFYING",
            RuleState::Finished => "FINISHED",
            RuleState::Failed => "FAILED",
            RuleState::Cancelled => "CANCELLED",
        }
    }
}

impl fmt::Display for RuleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleState {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RuleState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| ModelError::Invalid(format!("unknown rule state {s:?}")))
    }
}

/// A point-to-point data movement request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRule {
    pub rule_id: String,
    pub src: String,
    pub dst: String,
    pub priority: u64,
    pub total_bytes: u64,
    pub state: RuleState,
    pub src_endpoint: Option<String>,
    pub dst_endpoint: Option<String>,
    pub allocated_gbps: Option<Gbps>,
    pub circuit_id: Option<String>,
    pub created_at: Millis,
    pub updated_at: Millis,
    /// Set when a priority change on a provisioned rule awaits a new decision.
    #[serde(default)]
    pub needs_redecision: bool,
    /// Upstream reported completion before the rule reached PROVISIONED.
    #[serde(default)]
    pub completion_pending: bool,
    /// Consecutive failed provider attempts for the current side effect.
    #[serde(default)]
    pub attempts: u32,
    #[serde(default)]
    pub retry_at: Option<Millis>,
}

impl TransferRule {
    pub fn new(
        rule_id: impl Into<String>,
        src: impl Into<String>,
        dst: impl Into<String>,
        priority: u64,
        total_bytes: u64,
        now: Millis,
    ) -> Result<Self, ModelError> {
        let rule = TransferRule {
            rule_id: rule_id.into(),
            src: src.into(),
            dst: dst.into(),
            priority,
            total_bytes,
            state: RuleState::Initialized,
            src_endpoint: None,
            dst_endpoint: None,
            allocated_gbps: None,
            circuit_id: None,
            created_at: now,
            updated_at: now,
            needs_redecision: false,
            completion_pending: false,
            attempts: 0,
            retry_at: None,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.src == self.dst {
            return Err(ModelError::Invalid(format!(
                "rule {}: source and destination are both {}",
                self.rule_id, self.src
            )));
        }
        if self.priority < 1 {
            return Err(ModelError::Invalid(format!(
                "rule {}: priority must be >= 1",
                self.rule_id
            )));
        }
        if self.allocated_gbps.is_some() != self.state.carries_allocation() {
            return Err(ModelError::Invalid(format!(
                "rule {}: allocation presence inconsistent with state {}",
                self.rule_id, self.state
            )));
        }
        let has_eps = self.src_endpoint.is_some() && self.dst_endpoint.is_some();
        let any_eps = self.src_endpoint.is_some() || self.dst_endpoint.is_some();
        if has_eps != any_eps || has_eps != self.state.carries_endpoints() {
            return Err(ModelError::Invalid(format!(
                "rule {}: endpoint presence inconsistent with state {}",
                self.rule_id, self.state
            )));
        }
        Ok(())
    }

    /// Unordered site pair, smaller name first.
    pub fn site_pair(&self) -> (&str, &str) {
        if self.src <= self.dst {
            (&self.src, &self.dst)
        } else {
            (&self.dst, &self.src)
        }
    }
}

/// Moves `rule` to `target`, returning the updated snapshot.
///
/// Allocation and endpoint fields are normalized so the result satisfies the
/// per-state invariants: leaving the allocation-carrying states clears
/// `allocated_gbps`, and FAILED/CANCELLED/INITIALIZED drop endpoints.
pub fn transition(
    rule: &TransferRule,
    target: RuleState,
    now: Millis,
) -> Result<TransferRule, ModelError> {
    if !rule.state.can_transition_to(target) {
        return Err(ModelError::IllegalTransition {
            rule_id: rule.rule_id.clone(),
            from: rule.state,
            to: target,
        });
    }
    let mut next = rule.clone();
    next.state = target;
    next.updated_at = now.max(rule.updated_at);
    if target.carries_allocation() {
        if next.allocated_gbps.is_none() {
            next.allocated_gbps = Some(0);
        }
    } else {
        next.allocated_gbps = None;
    }
    if !target.carries_endpoints() {
        next.src_endpoint = None;
        next.dst_endpoint = None;
    }
    if matches!(
        target,
        RuleState::Failed | RuleState::Cancelled | RuleState::Initialized
    ) {
        next.needs_redecision = false;
        next.attempts = 0;
        next.retry_at = None;
        if target == RuleState::Initialized {
            next.circuit_id = None;
            next.completion_pending = false;
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CircuitStatus {
    Pending,
    Active,
    Stale,
    TornDown,
}

impl CircuitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CircuitStatus::Pending => "PENDING",
            CircuitStatus::Active => "ACTIVE",
            CircuitStatus::Stale => "STALE",
            CircuitStatus::TornDown => "TORN_DOWN",
        }
    }

    /// Whether the circuit currently holds port capacity.
    pub fn holds_capacity(self) -> bool {
        !matches!(self, CircuitStatus::TornDown)
    }
}

impl fmt::Display for CircuitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Circuit {
    pub circuit_id: String,
    pub src_site: String,
    pub dst_site: String,
    pub src_endpoint: String,
    pub dst_endpoint: String,
    pub bandwidth_gbps: Gbps,
    pub status: CircuitStatus,
    pub stale_since: Option<Millis>,
    /// Rule carried by the circuit, or the rule that claimed it for reuse while
    /// stale. `None` for an unclaimed stale or torn-down circuit.
    pub rule_id: Option<String>,
}

impl Circuit {
    pub fn touches(&self, site: &str) -> bool {
        self.src_site == site || self.dst_site == site
    }

    pub fn connects(&self, a: &str, b: &str) -> bool {
        (self.src_site == a && self.dst_site == b) || (self.src_site == b && self.dst_site == a)
    }

    /// Endpoint of this circuit that lives at `site`.
    pub fn endpoint_at(&self, site: &str) -> Option<&str> {
        if self.src_site == site {
            Some(&self.src_endpoint)
        } else if self.dst_site == site {
            Some(&self.dst_endpoint)
        } else {
            None
        }
    }

    pub fn validate(&self, granularity: Gbps) -> Result<(), ModelError> {
        let bad = |msg: &str| {
            Err(ModelError::Invalid(format!(
                "circuit {}: {msg}",
                self.circuit_id
            )))
        };
        match self.status {
            CircuitStatus::Active if self.bandwidth_gbps < granularity => {
                bad("active circuit below granularity")
            }
            CircuitStatus::Stale if self.bandwidth_gbps != granularity => {
                bad("stale circuit must hold exactly the minimum bandwidth")
            }
            _ if self.stale_since.is_some() != (self.status == CircuitStatus::Stale) => {
                bad("stale_since must be set iff STALE")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("illegal transition for rule {rule_id}: {from} -> {to}")]
    IllegalTransition {
        rule_id: String,
        from: RuleState,
        to: RuleState,
    },
    #[error("invalid domain value: {0}")]
    Invalid(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule() -> TransferRule {
        TransferRule::new("r1", "A", "B", 3, 1_000, 0).unwrap()
    }

    #[test]
    fn initialized_to_allocated() {
        let mut r = rule();
        r.src_endpoint = Some("a1".into());
        r.dst_endpoint = Some("b1".into());
        let next = transition(&r, RuleState::Allocated, 10).unwrap();
        assert_eq!(next.state, RuleState::Allocated);
        assert_eq!(next.updated_at, 10);
        next.validate().unwrap();
    }

    #[test]
    fn finished_has_no_forward_edge() {
        let mut r = rule();
        r.state = RuleState::Finished;
        let err = transition(&r, RuleState::Provisioned, 1).unwrap_err();
        assert!(matches!(err, ModelError::IllegalTransition { .. }));
    }

    #[test]
    fn modify_round_trip() {
        let mut r = rule();
        r.state = RuleState::Provisioned;
        r.allocated_gbps = Some(100);
        let m = transition(&r, RuleState::Modifying, 1).unwrap();
        let back = transition(&m, RuleState::Provisioned, 2).unwrap();
        assert_eq!(back.state, RuleState::Provisioned);
        assert_eq!(back.allocated_gbps, Some(100));
    }

    #[test]
    fn cancel_clears_resources() {
        let mut r = rule();
        r.state = RuleState::Decided;
        r.src_endpoint = Some("a1".into());
        r.dst_endpoint = Some("b1".into());
        r.allocated_gbps = Some(10);
        let c = transition(&r, RuleState::Cancelled, 5).unwrap();
        assert_eq!(c.allocated_gbps, None);
        assert_eq!(c.src_endpoint, None);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_loops_and_zero_priority() {
        assert!(TransferRule::new("r", "A", "A", 1, 0, 0).is_err());
        assert!(TransferRule::new("r", "A", "B", 0, 0, 0).is_err());
    }

    #[test]
    fn state_names_round_trip() {
        for st in RuleState::ALL {
            assert_eq!(st.as_str().parse::<RuleState>().unwrap(), st);
            let json = serde_json::to_string(&st).unwrap();
            assert_eq!(json, format!("\"{}\"", st.as_str()));
        }
    }

    #[test]
    fn duplicate_endpoint_names_rejected() {
        let site = Site::new("A", 100).with_endpoints(["e1", "e1"]);
        assert!(site.validate().is_err());
    }
}
