//! End of a rule's life: parking finished circuits, releasing cancelled
//! ones, and reaping circuits nobody reused.

use tracing::warn;

use super::{guard, Orchestrator, Result};
use crate::adapters::{AdapterError, JobStats};
use crate::model::{Circuit, CircuitStatus, RuleState, TransferRule};
use crate::monitor::build_report;

impl Orchestrator {
    /// Resolves early completions, parks the circuits of FINISHED rules at
    /// the minimum bandwidth (writing the rule's flow report), and releases
    /// the circuits of CANCELLED and FAILED rules.
    pub fn finish(&self) -> Result<usize> {
        let now = self.now();
        let rules = self.store.read(|tx| tx.rules())?;
        let mut acted = 0;

        for rule in rules.iter().filter(|r| r.completion_pending) {
            let target = match rule.state {
                RuleState::Provisioned => RuleState::Finished,
                RuleState::Initialized | RuleState::Allocated | RuleState::Decided => {
                    RuleState::Cancelled
                }
                _ => continue,
            };
            let res = self.store.write(|tx| {
                tx.transition_rule(&rule.rule_id, rule.state, target, now, |r| {
                    r.completion_pending = false;
                })
            });
            match res {
                Ok(_) => {
                    acted += 1;
                    let why = if target == RuleState::Cancelled {
                        " (completed upstream before a circuit was provisioned)"
                    } else {
                        ""
                    };
                    self.note("finish", format!("{} {target}{why}", rule.rule_id));
                }
                Err(e) if e.is_conflict() => {}
                Err(e) => return Err(e.into()),
            }
        }

        let (rules, circuits) = self.store.read(|tx| Ok((tx.rules()?, tx.circuits()?)))?;
        for rule in rules.iter().filter(|r| r.state.is_terminal()) {
            let Some(circuit) = owned_circuit(rule, &circuits) else {
                continue;
            };
            let done = match rule.state {
                RuleState::Finished => self.park(rule, circuit)?,
                _ => self.release(rule, circuit)?,
            };
            if done {
                acted += 1;
            }
        }
        Ok(acted)
    }

    /// Shrinks a finished rule's circuit to the minimum and marks it stale.
    fn park(&self, rule: &TransferRule, circuit: &Circuit) -> Result<bool> {
        let g = self.g();
        if circuit.status == CircuitStatus::Stale {
            // Claimed for reuse but the rule finished before reactivation.
            return self.release(rule, circuit);
        }
        if circuit.bandwidth_gbps != g {
            if let Err(e) = self.adapters.circuits.modify(&circuit.circuit_id, g) {
                warn!(circuit = %circuit.circuit_id, "park failed: {e}; retrying next cycle");
                return Ok(false);
            }
        }
        let stats = self.adapters.transfers.job_stats(&rule.rule_id).ok();
        let now = self.now();
        let cfg = &self.cfg.monitor;
        let report = self.store.write(|tx| {
            let mut c = circuit.clone();
            c.status = CircuitStatus::Stale;
            c.bandwidth_gbps = g;
            c.stale_since = Some(now);
            c.rule_id = None;
            tx.put_circuit(&c)?;
            tx.release_rule_endpoints(&rule.rule_id)?;
            let stats = match &stats {
                Some(s) => {
                    tx.put_job_stats(s)?;
                    s.clone()
                }
                None => tx
                    .job_stats(&rule.rule_id)?
                    .unwrap_or_else(|| JobStats::empty(&rule.rule_id)),
            };
            let report = build_report(&rule.rule_id, &tx.samples(&rule.rule_id)?, stats, cfg);
            tx.insert_report(&report)?;
            Ok(report)
        })?;
        self.note(
            "finish",
            format!(
                "{} circuit {} STALE at {g} Gbps; report {} efficiency {:.3}",
                rule.rule_id, circuit.circuit_id, report.verdict, report.efficiency
            ),
        );
        Ok(true)
    }

    /// Gives up a cancelled or failed rule's circuit. A stale circuit it had
    /// only claimed goes back to the reuse pool; anything else is torn down.
    fn release(&self, rule: &TransferRule, circuit: &Circuit) -> Result<bool> {
        if circuit.status == CircuitStatus::Stale {
            self.store.write(|tx| {
                let mut c = circuit.clone();
                c.rule_id = None;
                tx.put_circuit(&c)?;
                tx.release_rule_endpoints(&rule.rule_id)
            })?;
            self.note(
                "finish",
                format!(
                    "{} released its claim on stale circuit {}",
                    rule.rule_id, circuit.circuit_id
                ),
            );
            return Ok(true);
        }
        if !self.teardown(circuit)? {
            return Ok(false);
        }
        self.note(
            "finish",
            format!(
                "{} ({}) circuit {} TORN_DOWN",
                rule.rule_id, rule.state, circuit.circuit_id
            ),
        );
        Ok(true)
    }

    /// Tears a circuit down at the provider and records it. An already
    /// unknown circuit counts as torn down.
    fn teardown(&self, circuit: &Circuit) -> Result<bool> {
        match self.adapters.circuits.teardown(&circuit.circuit_id) {
            Ok(()) | Err(AdapterError::UnknownCircuit(_)) => {}
            Err(e) => {
                warn!(circuit = %circuit.circuit_id, "teardown failed: {e}; retrying next cycle");
                return Ok(false);
            }
        }
        self.store.write(|tx| {
            let mut c = circuit.clone();
            c.status = CircuitStatus::TornDown;
            c.stale_since = None;
            c.rule_id = None;
            tx.put_circuit(&c)?;
            tx.free_circuit_endpoints(&c.circuit_id)
        })?;
        Ok(true)
    }

    /// Tears down unclaimed stale circuits older than the reuse window.
    pub fn reap(&self) -> Result<usize> {
        let _lock = guard(&self.circuit_lock);
        let now = self.now();
        let window_ms = self.cfg.reuse_window_s * 1000;
        let circuits = self.store.read(|tx| tx.circuits())?;
        let mut reaped = 0;
        for c in circuits.iter().filter(|c| {
            c.status == CircuitStatus::Stale
                && c.rule_id.is_none()
                && c.stale_since
                    .is_some_and(|s| now.saturating_sub(s) > window_ms)
        }) {
            if self.teardown(c)? {
                reaped += 1;
                let idle = now - c.stale_since.unwrap_or(now);
                self.note(
                    "reaper",
                    format!(
                        "circuit {} TORN_DOWN after {} s unused",
                        c.circuit_id,
                        idle / 1000
                    ),
                );
            }
        }
        Ok(reaped)
    }
}

/// The live circuit a rule still holds or has claimed.
fn owned_circuit<'a>(rule: &TransferRule, circuits: &'a [Circuit]) -> Option<&'a Circuit> {
    let id = rule.circuit_id.as_deref()?;
    circuits.iter().find(|c| {
        c.circuit_id == id
            && c.status.holds_capacity()
            && c.rule_id.as_deref() == Some(rule.rule_id.as_str())
    })
}
