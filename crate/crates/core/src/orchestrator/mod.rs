//! The lifecycle daemons.
//!
//! Each daemon is a method that performs one pass over the store and
//! returns. [`Orchestrator::step`] runs them once in a fixed order, which is
//! how the simulator drives them; [`Orchestrator::spawn`] runs each on its own
//! thread for the real service. Daemons coordinate only through committed
//! store state.

mod backoff;
mod lifecycle;
mod provision;
mod sample;
mod tuning;

pub use backoff::BackoffConfig;
pub use tuning::{tune_transfers, TuningConfig};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::adapters::{AdapterError, Adapters, RuleEvent, RuleEventKind};
use crate::allocator::{self, AllocError};
use crate::clock::Clock;
use crate::model::{Circuit, CircuitStatus, Gbps, Millis, RuleState, Site, TransferRule};
use crate::monitor::MonitorConfig;
use crate::store::{Store, StoreError, Txn};

/// Round-trip times between site pairs; unordered, with a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RttTable {
    pub default_ms: f64,
    pairs: BTreeMap<String, f64>,
}

impl Default for RttTable {
    fn default() -> Self {
        RttTable {
            default_ms: 50.0,
            pairs: BTreeMap::new(),
        }
    }
}

impl RttTable {
    fn key(a: &str, b: &str) -> String {
        if a <= b {
            format!("{a}|{b}")
        } else {
            format!("{b}|{a}")
        }
    }

    pub fn set(&mut self, a: &str, b: &str, rtt_ms: f64) {
        self.pairs.insert(Self::key(a, b), rtt_ms);
    }

    pub fn get(&self, a: &str, b: &str) -> f64 {
        self.pairs
            .get(&Self::key(a, b))
            .copied()
            .unwrap_or(self.default_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub granularity_gbps: Gbps,
    /// Period of every daemon when run on threads.
    pub poll_interval_ms: Millis,
    /// How long an unused circuit is kept at minimum bandwidth.
    pub reuse_window_s: u64,
    /// Failed provider attempts tolerated before a rule fails.
    pub max_retries: u32,
    pub backoff: BackoffConfig,
    pub tuning: TuningConfig,
    pub monitor: MonitorConfig,
    pub rtt: RttTable,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            granularity_gbps: 5,
            poll_interval_ms: 10_000,
            reuse_window_s: 600,
            max_retries: 3,
            backoff: BackoffConfig::default(),
            tuning: TuningConfig::default(),
            monitor: MonitorConfig::default(),
            rtt: RttTable::default(),
        }
    }
}

impl OrchestratorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.granularity_gbps == 0 {
            return Err("allocator.granularity_gbps must be positive".into());
        }
        if self.poll_interval_ms == 0 || self.reuse_window_s == 0 {
            return Err("orchestrator intervals must be positive".into());
        }
        if self.backoff.initial_ms == 0 || self.backoff.factor == 0 {
            return Err("backoff parameters must be positive".into());
        }
        self.tuning.validate()?;
        self.monitor.validate()
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    /// Raised by an armed [`CrashPoint`]; the process is meant to die here.
    #[error("simulated crash at {0:?}")]
    Crashed(CrashPoint),
}

pub type Result<T, E = OrchestratorError> = std::result::Result<T, E>;

/// Places where a crash can be injected for recovery testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CrashPoint {
    /// After the provider accepted a create, before the store commit.
    AfterCreate,
    /// After a rule entered PROVISIONING, before it reaches PROVISIONED.
    AfterProvisioningCommit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogLine {
    pub t: Millis,
    pub daemon: String,
    pub message: String,
}

impl std::fmt::Display for LogLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{:>9.3}s] {:<9} {}",
            self.t as f64 / 1000.0,
            self.daemon,
            self.message
        )
    }
}

/// Shared, append-only record of what the daemons did.
pub type EventLog = Arc<Mutex<Vec<LogLine>>>;

/// Number of rules (or circuits) each daemon acted on in one pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub ingested: usize,
    pub assigned: usize,
    pub decided: usize,
    pub provisioned: usize,
    pub finished: usize,
    pub reaped: usize,
    pub sampled: usize,
}

pub struct Orchestrator {
    store: Arc<Store>,
    adapters: Adapters,
    clock: Arc<dyn Clock>,
    cfg: OrchestratorConfig,
    log: EventLog,
    decision_lock: Mutex<()>,
    circuit_lock: Mutex<()>,
    wake_decision: AtomicBool,
    crash: Mutex<Option<CrashPoint>>,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator")
            .field("store", &self.store)
            .field("cfg", &self.cfg)
            .finish()
    }
}

fn guard(m: &Mutex<()>) -> MutexGuard<'_, ()> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Orchestrator {
    pub fn new(
        store: Arc<Store>,
        adapters: Adapters,
        clock: Arc<dyn Clock>,
        cfg: OrchestratorConfig,
    ) -> Self {
        Orchestrator {
            store,
            adapters,
            clock,
            cfg,
            log: EventLog::default(),
            decision_lock: Mutex::new(()),
            circuit_lock: Mutex::new(()),
            wake_decision: AtomicBool::new(false),
            crash: Mutex::new(None),
        }
    }

    /// Sends daemon log lines to `log` in addition to tracing.
    pub fn with_log(mut self, log: EventLog) -> Self {
        self.log = log;
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.cfg
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    /// Arms a one-shot crash at `point`.
    pub fn arm_crash(&self, point: CrashPoint) {
        *self.crash.lock().unwrap_or_else(|e| e.into_inner()) = Some(point);
    }

    fn crash_at(&self, point: CrashPoint) -> Result<()> {
        let mut armed = self.crash.lock().unwrap_or_else(|e| e.into_inner());
        if *armed == Some(point) {
            *armed = None;
            return Err(OrchestratorError::Crashed(point));
        }
        Ok(())
    }

    fn now(&self) -> Millis {
        self.clock.now_ms()
    }

    fn note(&self, daemon: &str, message: String) {
        info!(daemon, "{message}");
        self.log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(LogLine {
                t: self.now(),
                daemon: daemon.to_string(),
                message,
            });
    }

    fn g(&self) -> Gbps {
        self.cfg.granularity_gbps
    }

    /// Registers the configured sites, merging in each site's endpoint
    /// inventory from the circuit provider. Safe to call on every start.
    pub fn bootstrap(&self, sites: &[Site]) -> Result<()> {
        let mut full = Vec::with_capacity(sites.len());
        for site in sites {
            let mut names: BTreeSet<String> =
                site.endpoints.iter().map(|e| e.name.clone()).collect();
            for ep in self.adapters.circuits.list_endpoints(&site.name)? {
                names.insert(ep.name);
            }
            full.push(Site::new(site.name.clone(), site.port_capacity).with_endpoints(names));
        }
        self.store.write(|tx| {
            for site in &full {
                tx.upsert_site(site)?;
            }
            Ok(())
        })?;
        Ok(())
    }

    /// One pass of every daemon in lifecycle order.
    pub fn step(&self) -> Result<StepReport> {
        let mut report = StepReport::default();
        match self.ingest() {
            Ok(n) => report.ingested = n,
            Err(OrchestratorError::Adapter(e)) => {
                warn!("rule source: {e}");
                self.note("ingest", format!("poll failed: {e}"));
            }
            Err(e) => return Err(e),
        }
        report.assigned = self.assign_endpoints()?;
        report.decided = self.decide()?;
        report.provisioned = self.provision()?;
        report.finished = self.finish()?;
        report.reaped = self.reap()?;
        report.sampled = self.sample()?;
        Ok(report)
    }

    // --- ingest ----------------------------------------------------------------

    /// Polls the rule source from the stored cursor and applies the events
    /// and the new cursor in one transaction.
    pub fn ingest(&self) -> Result<usize> {
        let cursor = self.store.read(|tx| tx.rule_cursor())?;
        let batch = self.adapters.rules.poll(cursor)?;
        if batch.events.is_empty() && batch.cursor == cursor {
            return Ok(0);
        }
        let now = self.now();
        let mut notes = Vec::new();
        let applied = self.store.write(|tx| {
            let known: BTreeSet<String> = tx.sites()?.into_iter().map(|s| s.name).collect();
            let mut applied = 0;
            for ev in &batch.events {
                if let Some(msg) = apply_event(tx, ev, &known, now)? {
                    applied += 1;
                    notes.push(msg);
                }
            }
            tx.set_rule_cursor(batch.cursor)?;
            Ok(applied)
        })?;
        for msg in notes {
            self.note("ingest", msg);
        }
        if applied > 0 {
            self.wake_decision.store(true, Ordering::SeqCst);
        }
        Ok(applied)
    }

    // --- endpoint assignment ---------------------------------------------------

    /// Gives every INITIALIZED rule an endpoint at each site, preferring the
    /// endpoints of an unclaimed stale circuit between the same sites, and
    /// otherwise the lowest-named free endpoint.
    pub fn assign_endpoints(&self) -> Result<usize> {
        let _lock = guard(&self.circuit_lock);
        let (rules, endpoints, circuits) = self.store.read(|tx| {
            let rules = tx.rules_in(&[RuleState::Initialized])?;
            let mut eps = HashMap::new();
            for site in tx.sites()? {
                eps.insert(site.name.clone(), site.endpoints);
            }
            Ok((rules, eps, tx.circuits()?))
        })?;
        let now = self.now();
        let mut taken: BTreeSet<(String, String)> = BTreeSet::new();
        let mut used_circuits: BTreeSet<String> = BTreeSet::new();
        let mut assigned = 0;

        for rule in rules {
            let stale = circuits.iter().find(|c| {
                c.status == CircuitStatus::Stale
                    && c.rule_id.is_none()
                    && c.connects(&rule.src, &rule.dst)
                    && !used_circuits.contains(&c.circuit_id)
            });
            let choice = match stale {
                Some(c) => Some((
                    c.endpoint_at(&rule.src).unwrap().to_string(),
                    c.endpoint_at(&rule.dst).unwrap().to_string(),
                    Some(c.clone()),
                )),
                None => {
                    let pick = |site: &str| {
                        endpoints.get(site).and_then(|eps| {
                            eps.iter()
                                .find(|e| {
                                    e.is_free()
                                        && !taken.contains(&(site.to_string(), e.name.clone()))
                                })
                                .map(|e| e.name.clone())
                        })
                    };
                    match (pick(&rule.src), pick(&rule.dst)) {
                        (Some(s), Some(d)) => Some((s, d, None)),
                        _ => None,
                    }
                }
            };
            let Some((src_ep, dst_ep, circuit)) = choice else {
                warn!(rule = %rule.rule_id, "no free endpoint pair; retrying next cycle");
                continue;
            };
            let cid = circuit.as_ref().map(|c| c.circuit_id.clone());
            let res = self.store.write(|tx| {
                tx.claim_endpoint(&rule.src, &src_ep, &rule.rule_id, cid.as_deref())?;
                tx.claim_endpoint(&rule.dst, &dst_ep, &rule.rule_id, cid.as_deref())?;
                if let Some(c) = &circuit {
                    let mut fresh = tx
                        .circuit(&c.circuit_id)?
                        .filter(|f| f.status == CircuitStatus::Stale && f.rule_id.is_none())
                        .ok_or_else(|| StoreError::Conflict(format!("circuit {}", c.circuit_id)))?;
                    fresh.rule_id = Some(rule.rule_id.clone());
                    tx.put_circuit(&fresh)?;
                }
                tx.transition_rule(
                    &rule.rule_id,
                    RuleState::Initialized,
                    RuleState::Allocated,
                    now,
                    |r| {
                        r.src_endpoint = Some(src_ep.clone());
                        r.dst_endpoint = Some(dst_ep.clone());
                        r.circuit_id = cid.clone();
                    },
                )
            });
            match res {
                Ok(_) => {
                    assigned += 1;
                    taken.insert((rule.src.clone(), src_ep.clone()));
                    taken.insert((rule.dst.clone(), dst_ep.clone()));
                    let how = match &cid {
                        Some(c) => {
                            used_circuits.insert(c.clone());
                            format!(" (reusing stale circuit {c})")
                        }
                        None => String::new(),
                    };
                    self.note(
                        "endpoint",
                        format!("{} ALLOCATED {src_ep} <-> {dst_ep}{how}", rule.rule_id),
                    );
                }
                Err(e) if e.is_conflict() => {
                    warn!(rule = %rule.rule_id, "endpoint claim lost a race: {e}");
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(assigned)
    }

    // --- decision ----------------------------------------------------------------

    /// Port capacity left for active rules once circuits that no active
    /// rule owns (stale ones, or ones about to be released) are charged at
    /// the minimum bandwidth.
    fn decision_sites(&self, tx: &Txn<'_>) -> Result<Vec<Site>, StoreError> {
        let g = self.g();
        let rules: HashMap<String, RuleState> = tx
            .rules()?
            .into_iter()
            .map(|r| (r.rule_id, r.state))
            .collect();
        let mut reserved: HashMap<String, Gbps> = HashMap::new();
        for c in tx.circuits()? {
            if !c.status.holds_capacity() {
                continue;
            }
            let owned = c
                .rule_id
                .as_ref()
                .and_then(|id| rules.get(id))
                .is_some_and(|s| s.is_active());
            if !owned {
                *reserved.entry(c.src_site.clone()).or_default() += g;
                *reserved.entry(c.dst_site.clone()).or_default() += g;
            }
        }
        Ok(tx
            .sites()?
            .into_iter()
            .map(|mut s| {
                let r = reserved.get(&s.name).copied().unwrap_or(0);
                s.port_capacity = s.port_capacity.saturating_sub(r);
                s
            })
            .collect())
    }

    /// Recomputes allocations for all active rules. ALLOCATED rules become
    /// DECIDED; PROVISIONED rules whose allocation changed become MODIFYING.
    pub fn decide(&self) -> Result<usize> {
        let _lock = guard(&self.decision_lock);
        self.wake_decision.store(false, Ordering::SeqCst);
        let (active, sites) = self.store.read(|tx| {
            let active: Vec<TransferRule> = tx
                .rules()?
                .into_iter()
                .filter(|r| r.state.is_active())
                .collect();
            Ok((active, self.decision_sites(tx)?))
        })?;
        if active.is_empty() {
            return Ok(0);
        }
        let allocations = allocator::allocate(&active, &sites, self.g())?;
        let now = self.now();
        let mut notes = Vec::new();
        let changed = self.store.write(|tx| {
            let mut changed = 0;
            for (rule, alloc) in active.iter().zip(&allocations) {
                debug_assert_eq!(rule.rule_id, alloc.rule_id);
                let bw = alloc.bandwidth_gbps;
                let id = &rule.rule_id;
                match rule.state {
                    RuleState::Allocated => {
                        tx.transition_rule(id, rule.state, RuleState::Decided, now, |r| {
                            r.allocated_gbps = Some(bw);
                            r.needs_redecision = false;
                        })?;
                        notes.push(format!("{id} DECIDED {bw} Gbps"));
                        changed += 1;
                    }
                    RuleState::Provisioned if rule.allocated_gbps != Some(bw) => {
                        let old = rule.allocated_gbps.unwrap_or(0);
                        tx.transition_rule(id, rule.state, RuleState::Modifying, now, |r| {
                            r.allocated_gbps = Some(bw);
                            r.needs_redecision = false;
                            r.attempts = 0;
                            r.retry_at = None;
                        })?;
                        notes.push(format!("{id} MODIFYING {old} -> {bw} Gbps"));
                        changed += 1;
                    }
                    _ if rule.allocated_gbps != Some(bw) => {
                        let old = rule.allocated_gbps.unwrap_or(0);
                        tx.update_rule(id, rule.state, now, |r| {
                            r.allocated_gbps = Some(bw);
                            r.needs_redecision = false;
                        })?;
                        notes.push(format!(
                            "{id} reallocated {old} -> {bw} Gbps ({})",
                            rule.state
                        ));
                        changed += 1;
                    }
                    _ if rule.needs_redecision => {
                        tx.update_rule(id, rule.state, now, |r| r.needs_redecision = false)?;
                    }
                    _ => {}
                }
            }
            Ok(changed)
        });
        let changed = match changed {
            Ok(n) => n,
            Err(e) if e.is_conflict() => {
                warn!("decision raced with another daemon: {e}; retrying next cycle");
                return Ok(0);
            }
            Err(e) => return Err(e.into()),
        };
        for msg in notes {
            self.note("decision", msg);
        }
        Ok(changed)
    }

    // --- shared helpers ------------------------------------------------------------

    /// Records a failed provider attempt; the rule fails once attempts
    /// exceed `max_retries`.
    fn record_failure(&self, rule: &TransferRule, err: &AdapterError) -> Result<()> {
        let now = self.now();
        let attempts = rule.attempts + 1;
        let id = &rule.rule_id;
        if attempts > self.cfg.max_retries {
            let res = self
                .store
                .write(|tx| tx.transition_rule(id, rule.state, RuleState::Failed, now, |_| {}));
            match res {
                Ok(_) => self.note(
                    "provision",
                    format!("{id} FAILED after {attempts} attempts: {err}"),
                ),
                Err(e) if e.is_conflict() => {}
                Err(e) => return Err(e.into()),
            }
        } else {
            let retry_at = now + self.cfg.backoff.delay(attempts);
            let res = self.store.write(|tx| {
                tx.update_rule(id, rule.state, now, |r| {
                    r.attempts = attempts;
                    r.retry_at = Some(retry_at);
                })
            });
            match res {
                Ok(_) => self.note(
                    "provision",
                    format!("{id} attempt {attempts} failed: {err}; retry at {retry_at} ms"),
                ),
                Err(e) if e.is_conflict() => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    fn due(&self, rule: &TransferRule) -> bool {
        rule.retry_at.is_none_or(|t| t <= self.now())
    }

    // --- threads -------------------------------------------------------------------

    /// Runs every daemon on its own thread until `stop` is set. The decision
    /// daemon also runs as soon as ingest applies new events.
    pub fn spawn(self: &Arc<Self>, stop: Arc<AtomicBool>) -> Vec<JoinHandle<()>> {
        type Daemon = fn(&Orchestrator) -> Result<usize>;
        let daemons: [(&str, Daemon); 7] = [
            ("ingest", Orchestrator::ingest),
            ("endpoint", Orchestrator::assign_endpoints),
            ("decision", Orchestrator::decide),
            ("provision", Orchestrator::provision),
            ("finish", Orchestrator::finish),
            ("reaper", Orchestrator::reap),
            ("sample", Orchestrator::sample),
        ];
        let period = Duration::from_millis(self.cfg.poll_interval_ms);
        let tick = Duration::from_millis(100).min(period);
        daemons
            .into_iter()
            .map(|(name, run)| {
                let orch = Arc::clone(self);
                let stop = Arc::clone(&stop);
                std::thread::Builder::new()
                    .name(format!("daemon-{name}"))
                    .spawn(move || {
                        let mut waited = period;
                        while !stop.load(Ordering::SeqCst) {
                            let woken =
                                name == "decision" && orch.wake_decision.load(Ordering::SeqCst);
                            if waited >= period || woken {
                                waited = Duration::ZERO;
                                if let Err(e) = run(&orch) {
                                    warn!(daemon = name, "pass failed: {e}");
                                }
                            }
                            std::thread::sleep(tick);
                            waited += tick;
                        }
                    })
                    .expect("spawn daemon thread")
            })
            .collect()
    }
}

/// Applies one upstream event. Returns a log line when something changed.
fn apply_event(
    tx: &Txn<'_>,
    ev: &RuleEvent,
    sites: &BTreeSet<String>,
    now: Millis,
) -> Result<Option<String>, StoreError> {
    let id = &ev.rule_id;
    match &ev.kind {
        RuleEventKind::New(meta) => {
            if meta.sources.len() != 1 || meta.destinations.len() != 1 {
                warn!(rule = %id, "skipping rule that is not single source and destination");
                return Ok(Some(format!(
                    "{id} skipped: {} sources, {} destinations",
                    meta.sources.len(),
                    meta.destinations.len()
                )));
            }
            let (src, dst) = (&meta.sources[0], &meta.destinations[0]);
            if let Some(unknown) = [src, dst].into_iter().find(|s| !sites.contains(*s)) {
                warn!(rule = %id, site = %unknown, "skipping rule for unconfigured site");
                return Ok(Some(format!("{id} skipped: unknown site {unknown}")));
            }
            let rule = match TransferRule::new(
                id.clone(),
                src.clone(),
                dst.clone(),
                meta.priority,
                meta.total_bytes,
                now,
            ) {
                Ok(r) => r,
                Err(e) => {
                    warn!(rule = %id, "skipping invalid rule: {e}");
                    return Ok(Some(format!("{id} skipped: {e}")));
                }
            };
            if tx.rule(id)?.is_some() {
                return Ok(None);
            }
            tx.insert_rule(&rule)?;
            Ok(Some(format!(
                "{id} INITIALIZED {src} -> {dst} priority {} bytes {}",
                meta.priority, meta.total_bytes
            )))
        }
        RuleEventKind::PriorityChanged { priority } => {
            let Some(rule) = tx.rule(id)? else {
                return Ok(None);
            };
            if rule.state.is_terminal() || *priority == 0 || rule.priority == *priority {
                return Ok(None);
            }
            let old = rule.priority;
            tx.update_rule(id, rule.state, now, |r| {
                r.priority = *priority;
                r.needs_redecision = r.state == RuleState::Provisioned || r.needs_redecision;
            })?;
            Ok(Some(format!("{id} priority {old} -> {priority}")))
        }
        RuleEventKind::Completed => {
            let Some(rule) = tx.rule(id)? else {
                return Ok(None);
            };
            match rule.state {
                s if s.is_terminal() => Ok(None),
                RuleState::Provisioned => {
                    tx.transition_rule(id, rule.state, RuleState::Finished, now, |_| {})?;
                    Ok(Some(format!("{id} FINISHED")))
                }
                _ => {
                    tx.update_rule(id, rule.state, now, |r| r.completion_pending = true)?;
                    Ok(Some(format!(
                        "{id} completed upstream while {}",
                        rule.state
                    )))
                }
            }
        }
        RuleEventKind::Cancelled => {
            let Some(rule) = tx.rule(id)? else {
                return Ok(None);
            };
            if rule.state.is_terminal() {
                return Ok(None);
            }
            tx.transition_rule(id, rule.state, RuleState::Cancelled, now, |_| {})?;
            Ok(Some(format!("{id} CANCELLED")))
        }
    }
}

/// Sum of bandwidth held by circuits at each site.
pub fn site_usage(circuits: &[Circuit]) -> HashMap<String, Gbps> {
    let mut usage: HashMap<String, Gbps> = HashMap::new();
    for c in circuits.iter().filter(|c| c.status.holds_capacity()) {
        *usage.entry(c.src_site.clone()).or_default() += c.bandwidth_gbps;
        *usage.entry(c.dst_site.clone()).or_default() += c.bandwidth_gbps;
    }
    usage
}

#[cfg(test)]
mod tests;
