//! Provider calls for decided and modifying rules, plus transfer tuning.

use std::collections::{BTreeMap, HashMap};

use tracing::warn;

use super::{site_usage, tune_transfers, CrashPoint, Orchestrator, Result};
use crate::adapters::{AdapterError, CircuitRequest, ProviderStatus};
use crate::model::{Circuit, CircuitStatus, Gbps, RuleState, Site, TransferRule};
use crate::store::LinkTuning;

/// In-memory view of port usage used to hold back changes that would
/// oversubscribe a site until other circuits have shrunk.
struct CapacityGuard {
    capacity: HashMap<String, Gbps>,
    usage: HashMap<String, Gbps>,
}

impl CapacityGuard {
    fn new(sites: &[Site], circuits: &[Circuit]) -> Self {
        CapacityGuard {
            capacity: sites
                .iter()
                .map(|s| (s.name.clone(), s.port_capacity))
                .collect(),
            usage: site_usage(circuits),
        }
    }

    fn fits(&self, a: &str, b: &str, from: Gbps, to: Gbps) -> bool {
        [a, b].iter().all(|s| {
            let used = self.usage.get(*s).copied().unwrap_or(0);
            let cap = self.capacity.get(*s).copied().unwrap_or(0);
            used - from.min(used) + to <= cap || to <= from
        })
    }

    fn apply(&mut self, a: &str, b: &str, from: Gbps, to: Gbps) {
        for s in [a, b] {
            let used = self.usage.entry(s.to_string()).or_default();
            *used = *used - from.min(*used) + to;
        }
    }
}

impl Orchestrator {
    /// Drives in-flight rules toward PROVISIONED and keeps the transfer tool's active counts in line with circuit
    /// bandwidth.
    pub fn provision(&self) -> Result<usize> {
        let (rules, circuits, sites) = self
            .store
            .read(|tx| Ok((tx.rules()?, tx.circuits()?, tx.sites()?)))?;
        let mut guard = CapacityGuard::new(&sites, &circuits);
        let by_id: HashMap<&str, &Circuit> = circuits
            .iter()
            .map(|c| (c.circuit_id.as_str(), c))
            .collect();
        let mut acted = 0;

        for rule in rules.iter().filter(|r| r.state == RuleState::Provisioning) {
            if self.due(rule)
                && self.poll_provisioning(
                    rule,
                    by_id.get(rule.circuit_id.as_deref().unwrap_or("")).copied(),
                )?
            {
                acted += 1;
            }
        }

        // Re-read: polling may have moved rules into MODIFYING.
        let rules = self.store.read(|tx| tx.rules())?;
        let circuits = self.store.read(|tx| tx.circuits())?;
        let by_id: HashMap<&str, &Circuit> = circuits
            .iter()
            .map(|c| (c.circuit_id.as_str(), c))
            .collect();

        let mut modifying: Vec<(&TransferRule, &Circuit, Gbps)> = Vec::new();
        for rule in rules.iter().filter(|r| r.state == RuleState::Modifying) {
            let Some(circuit) = rule.circuit_id.as_deref().and_then(|id| by_id.get(id)) else {
                warn!(rule = %rule.rule_id, "modifying rule without a circuit");
                continue;
            };
            let target = rule.allocated_gbps.unwrap_or(0).max(self.g());
            if rule.completion_pending || target == circuit.bandwidth_gbps {
                self.settle_modify(rule, circuit, circuit.bandwidth_gbps)?;
                acted += 1;
                continue;
            }
            if self.due(rule) {
                modifying.push((rule, circuit, target));
            }
        }
        // Shrink first so the freed capacity can fund increases.
        modifying.sort_by_key(|(_, c, target)| *target > c.bandwidth_gbps);
        for (rule, circuit, target) in modifying {
            let (a, b) = (&circuit.src_site, &circuit.dst_site);
            if !guard.fits(a, b, circuit.bandwidth_gbps, target) {
                continue;
            }
            match self.adapters.circuits.modify(&circuit.circuit_id, target) {
                Ok(()) => {
                    guard.apply(a, b, circuit.bandwidth_gbps, target);
                    self.settle_modify(rule, circuit, target)?;
                    acted += 1;
                }
                Err(e) => self.record_failure(rule, &e)?,
            }
        }

        for rule in rules.iter().filter(|r| r.state == RuleState::Decided) {
            let bw = rule.allocated_gbps.unwrap_or(0);
            if bw < self.g() || !self.due(rule) || rule.completion_pending {
                continue;
            }
            let stale = rule
                .circuit_id
                .as_deref()
                .and_then(|id| by_id.get(id))
                .filter(|c| {
                    c.status == CircuitStatus::Stale && c.rule_id.as_deref() == Some(&rule.rule_id)
                });
            if let Some(circuit) = stale {
                if !guard.fits(&rule.src, &rule.dst, circuit.bandwidth_gbps, bw) {
                    continue;
                }
                if self.reuse(rule, circuit, bw)? {
                    guard.apply(&rule.src, &rule.dst, circuit.bandwidth_gbps, bw);
                    acted += 1;
                }
            } else {
                if !guard.fits(&rule.src, &rule.dst, 0, bw) {
                    continue;
                }
                if self.create(rule, bw)? {
                    guard.apply(&rule.src, &rule.dst, 0, bw);
                    acted += 1;
                }
            }
        }

        self.sync_links()?;
        Ok(acted)
    }

    /// Checks a PROVISIONING rule's circuit with the provider.
    fn poll_provisioning(&self, rule: &TransferRule, circuit: Option<&Circuit>) -> Result<bool> {
        let Some(circuit) = circuit else {
            warn!(rule = %rule.rule_id, "provisioning rule has no circuit record");
            return Ok(false);
        };
        let status = match self.adapters.circuits.status(&circuit.circuit_id) {
            Ok(s) => s,
            Err(AdapterError::UnknownCircuit(_)) => {
                self.lost_circuit(rule, circuit)?;
                return Ok(true);
            }
            Err(e) => {
                self.record_failure(rule, &e)?;
                return Ok(false);
            }
        };
        match status.status {
            ProviderStatus::Pending => Ok(false),
            ProviderStatus::TornDown => {
                self.lost_circuit(rule, circuit)?;
                Ok(true)
            }
            ProviderStatus::Active => {
                let now = self.now();
                let target = rule.allocated_gbps.unwrap_or(0).max(self.g());
                let needs_modify = !rule.completion_pending && target != status.bandwidth_gbps;
                let id = &rule.rule_id;
                self.store.write(|tx| {
                    let mut c = circuit.clone();
                    c.status = CircuitStatus::Active;
                    c.bandwidth_gbps = status.bandwidth_gbps;
                    tx.put_circuit(&c)?;
                    tx.transition_rule(
                        id,
                        RuleState::Provisioning,
                        RuleState::Provisioned,
                        now,
                        |r| {
                            r.attempts = 0;
                            r.retry_at = None;
                        },
                    )?;
                    if needs_modify {
                        tx.transition_rule(
                            id,
                            RuleState::Provisioned,
                            RuleState::Modifying,
                            now,
                            |_| {},
                        )?;
                    }
                    Ok(())
                })?;
                self.note(
                    "provision",
                    format!(
                        "{id} PROVISIONED on {} at {} Gbps",
                        circuit.circuit_id, status.bandwidth_gbps
                    ),
                );
                if needs_modify {
                    self.note("provision", format!("{id} MODIFYING to {target} Gbps"));
                }
                Ok(true)
            }
        }
    }

    /// The provider no longer knows the circuit: record it gone and fail the
    /// rule so it is not left waiting forever.
    fn lost_circuit(&self, rule: &TransferRule, circuit: &Circuit) -> Result<()> {
        let now = self.now();
        self.store.write(|tx| {
            let mut c = circuit.clone();
            c.status = CircuitStatus::TornDown;
            c.stale_since = None;
            c.rule_id = None;
            tx.put_circuit(&c)?;
            tx.free_circuit_endpoints(&c.circuit_id)?;
            tx.transition_rule(&rule.rule_id, rule.state, RuleState::Failed, now, |_| {})
        })?;
        self.note(
            "provision",
            format!(
                "{} FAILED: circuit {} vanished",
                rule.rule_id, circuit.circuit_id
            ),
        );
        Ok(())
    }

    fn settle_modify(&self, rule: &TransferRule, circuit: &Circuit, bw: Gbps) -> Result<()> {
        let now = self.now();
        let id = &rule.rule_id;
        self.store.write(|tx| {
            let mut c = circuit.clone();
            c.bandwidth_gbps = bw;
            tx.put_circuit(&c)?;
            tx.transition_rule(id, RuleState::Modifying, RuleState::Provisioned, now, |r| {
                r.attempts = 0;
                r.retry_at = None;
            })
        })?;
        if bw != circuit.bandwidth_gbps {
            self.note(
                "provision",
                format!(
                    "{id} PROVISIONED after modify {} {} -> {bw} Gbps",
                    circuit.circuit_id, circuit.bandwidth_gbps
                ),
            );
        }
        Ok(())
    }

    /// Re-activates a stale circuit claimed by `rule` with a modify.
    fn reuse(&self, rule: &TransferRule, circuit: &Circuit, bw: Gbps) -> Result<bool> {
        if let Err(e) = self.adapters.circuits.modify(&circuit.circuit_id, bw) {
            self.record_failure(rule, &e)?;
            return Ok(false);
        }
        let now = self.now();
        let id = &rule.rule_id;
        self.store.write(|tx| {
            let mut c = circuit.clone();
            c.status = CircuitStatus::Active;
            c.bandwidth_gbps = bw;
            c.stale_since = None;
            tx.put_circuit(&c)?;
            tx.transition_rule(id, RuleState::Decided, RuleState::Provisioning, now, |_| {})?;
            tx.transition_rule(
                id,
                RuleState::Provisioning,
                RuleState::Provisioned,
                now,
                |r| {
                    r.attempts = 0;
                    r.retry_at = None;
                },
            )
        })?;
        self.note(
            "provision",
            format!(
                "{id} PROVISIONED reusing {} at {bw} Gbps",
                circuit.circuit_id
            ),
        );
        Ok(true)
    }

    /// Creates a circuit for a DECIDED rule. The rule id is the idempotency
    /// key, so repeating this after a crash returns the same circuit.
    fn create(&self, rule: &TransferRule, bw: Gbps) -> Result<bool> {
        let (Some(src_ep), Some(dst_ep)) = (&rule.src_endpoint, &rule.dst_endpoint) else {
            return Ok(false);
        };
        let req = CircuitRequest {
            src_site: rule.src.clone(),
            dst_site: rule.dst.clone(),
            src_endpoint: src_ep.clone(),
            dst_endpoint: dst_ep.clone(),
            bandwidth_gbps: bw,
            idempotency_key: rule.rule_id.clone(),
        };
        let circuit_id = match self.adapters.circuits.create(&req) {
            Ok(id) => id,
            Err(e) => {
                self.record_failure(rule, &e)?;
                return Ok(false);
            }
        };
        self.crash_at(CrashPoint::AfterCreate)?;
        let circuit = Circuit {
            circuit_id: circuit_id.clone(),
            src_site: rule.src.clone(),
            dst_site: rule.dst.clone(),
            src_endpoint: src_ep.clone(),
            dst_endpoint: dst_ep.clone(),
            bandwidth_gbps: bw,
            status: CircuitStatus::Pending,
            stale_since: None,
            rule_id: Some(rule.rule_id.clone()),
        };
        let now = self.now();
        let id = &rule.rule_id;
        self.store.write(|tx| {
            tx.put_circuit(&circuit)?;
            tx.bind_circuit_endpoints(&circuit)?;
            tx.transition_rule(id, RuleState::Decided, RuleState::Provisioning, now, |r| {
                r.circuit_id = Some(circuit_id.clone());
                r.attempts = 0;
                r.retry_at = None;
            })
        })?;
        self.note(
            "provision",
            format!("{id} PROVISIONING circuit {circuit_id} {src_ep} <-> {dst_ep} at {bw} Gbps"),
        );
        self.crash_at(CrashPoint::AfterProvisioningCommit)?;
        Ok(true)
    }

    /// Pushes active-transfer counts for every directed site pair that has
    /// provisioned rules. Counts that failed to apply are retried next pass.
    pub(crate) fn sync_links(&self) -> Result<()> {
        let (rules, circuits, links) = self
            .store
            .read(|tx| Ok((tx.rules()?, tx.circuits()?, tx.links()?)))?;
        let by_id: HashMap<&str, &Circuit> = circuits
            .iter()
            .map(|c| (c.circuit_id.as_str(), c))
            .collect();
        let mut demand: BTreeMap<(String, String), Gbps> = BTreeMap::new();
        for r in rules
            .iter()
            .filter(|r| matches!(r.state, RuleState::Provisioned | RuleState::Modifying))
        {
            if let Some(c) = r.circuit_id.as_deref().and_then(|id| by_id.get(id)) {
                *demand.entry((r.src.clone(), r.dst.clone())).or_default() += c.bandwidth_gbps;
            }
        }
        let t = &self.cfg.tuning;
        for ((src, dst), bw) in demand {
            let existing = links.iter().find(|l| l.src == src && l.dst == dst);
            let boost = existing.map_or(0, |l| l.boost);
            let base = tune_transfers(bw, self.cfg.rtt.get(&src, &dst), t);
            let active = boosted(base, boost, t.max_active);
            if existing.is_some_and(|l| l.applied && l.active == active) {
                continue;
            }
            self.push_link(LinkTuning {
                src,
                dst,
                active,
                boost,
                applied: false,
            })?;
        }
        Ok(())
    }

    /// Sends a link's active count to the transfer tool and records whether
    /// it was applied.
    pub(crate) fn push_link(&self, mut link: LinkTuning) -> Result<()> {
        match self
            .adapters
            .transfers
            .set_active(&link.src, &link.dst, link.active)
        {
            Ok(()) => {
                link.applied = true;
                self.note(
                    "provision",
                    format!(
                        "link {} -> {} active transfers {}",
                        link.src, link.dst, link.active
                    ),
                );
            }
            Err(e) => {
                link.applied = false;
                warn!(src = %link.src, dst = %link.dst, "set_active failed: {e}");
            }
        }
        self.store.write(|tx| tx.put_link(&link))?;
        Ok(())
    }
}

pub(crate) fn boosted(base: u32, boost: u32, max: u32) -> u32 {
    let factor = 1u64 << boost.min(32);
    (base as u64 * factor).min(max as u64) as u32
}
