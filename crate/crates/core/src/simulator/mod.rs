//! Deterministic virtual-time simulation of the whole service.
//!
//! The simulator owns the mock adapters (the outside world) and an
//! orchestrator over a file-backed store. Every 1 s tick it
//!
//! 1. delivers due scenario events to the mocks,
//! 2. lets the simulated data-management system fetch endpoints for new
//!    rules through the allocation API handler,
//! 3. steps the daemons once in lifecycle order,
//! 4. checks the global invariants,
//! 5. moves bytes for every flow that has a live circuit, records the rates
//!    as metrics, and reports finished flows as completed upstream.
//!
//! Identical scenario and seed give identical results.

mod scenario;

pub use scenario::{
    FaultTarget, ModelParams, RttEntry, Scenario, ScenarioInvalid, ScenarioSettings, ScenarioSite,
    SimEvent, SimEventKind,
};

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::mock::{
    MockCircuitProvider, MockMetricsSource, MockRuleSource, MockTransferTool, ProviderCalls,
};
use crate::adapters::{Adapters, RuleEventKind, RuleMetadata};
use crate::clock::{Clock, VirtualClock};
use crate::model::{Millis, RuleState, Site};
use crate::orchestrator::{EventLog, LogLine, Orchestrator, OrchestratorConfig, OrchestratorError};
use crate::service;
use crate::store::{Store, StoreError, StoreSnapshot};

const TICK_MS: Millis = 1_000;
/// Upper bound on a run without `until_s`, in ticks.
const MAX_TICKS: u64 = 200_000;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Invalid(#[from] ScenarioInvalid),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("temporary store: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub scenario: Option<String>,
    pub seed: u64,
    pub ticks: u64,
    pub end_ms: Millis,
    pub restarts: u32,
    pub log: Vec<LogLine>,
    pub completion_ms: BTreeMap<String, Millis>,
    pub provider_calls: ProviderCalls,
    pub assertions: Vec<Assertion>,
    pub snapshot: StoreSnapshot,
}

impl SimResult {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }

    /// Human-readable event log and assertion summary.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.log {
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out.push_str(&format!(
            "\n{} ticks, {} restarts, provider: {} creates, {} modifies, {} teardowns\n",
            self.ticks,
            self.restarts,
            self.provider_calls.creates,
            self.provider_calls.modifies,
            self.provider_calls.teardowns
        ));
        for (rule, t) in &self.completion_ms {
            out.push_str(&format!(
                "completed {rule} at {:.0} s\n",
                *t as f64 / 1000.0
            ));
        }
        for a in &self.assertions {
            let mark = if a.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{mark} {}: {}\n", a.name, a.detail));
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Flow {
    src: String,
    dst: String,
    total_bytes: u64,
    delivered: f64,
    endpoints: Option<(String, String)>,
    scale: f64,
    cancelled: bool,
    completed_at: Option<Millis>,
    started: bool,
}

#[derive(Debug, Default)]
struct Checks {
    violations: BTreeMap<&'static str, Vec<String>>,
    counts: BTreeMap<&'static str, u64>,
}

impl Checks {
    fn check(&mut self, name: &'static str, ok: bool, detail: impl FnOnce() -> String) {
        *self.counts.entry(name).or_default() += 1;
        let v = self.violations.entry(name).or_default();
        if !ok && v.len() < 20 {
            v.push(detail());
        }
    }
}

pub struct Simulation {
    scenario: Scenario,
    cfg: OrchestratorConfig,
    sites: Vec<Site>,
    clock: VirtualClock,
    rules: Arc<MockRuleSource>,
    provider: Arc<MockCircuitProvider>,
    tool: Arc<MockTransferTool>,
    metrics: Arc<MockMetricsSource>,
    _dir: tempfile::TempDir,
    store_path: PathBuf,
    orch: Option<Orchestrator>,
    log: EventLog,
    rng: ChaCha8Rng,
    next_event: usize,
    flows: IndexMap<String, Flow>,
    rates: BTreeMap<String, f64>,
    checks: Checks,
    ticks: u64,
    restarts: u32,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Simulation, SimError> {
        scenario.validate()?;
        let cfg = scenario.orchestrator_config();
        let sites = scenario.sites();
        let clock = VirtualClock::new();
        let dyn_clock: Arc<dyn Clock> = Arc::new(clock.clone());
        let inventory: IndexMap<String, Vec<String>> = scenario
            .sites
            .iter()
            .map(|s| (s.name.clone(), s.endpoint_names()))
            .collect();
        let metrics = Arc::new(MockMetricsSource::new(dyn_clock.clone()));
        for names in inventory.values() {
            for n in names {
                metrics.register_endpoint(n);
            }
        }
        let provider = Arc::new(
            MockCircuitProvider::new(dyn_clock.clone(), inventory)
                .with_provision_delay(scenario.orchestrator.provision_delay_s * 1000),
        );
        let dir = tempfile::tempdir()?;
        let store_path = dir.path().join("flowdirector.db");
        let mut sim = Simulation {
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            cfg,
            sites,
            rules: Arc::new(MockRuleSource::new(dyn_clock.clone())),
            provider,
            tool: Arc::new(MockTransferTool::new()),
            metrics,
            clock,
            _dir: dir,
            store_path,
            orch: None,
            log: EventLog::default(),
            next_event: 0,
            flows: IndexMap::new(),
            rates: BTreeMap::new(),
            checks: Checks::default(),
            ticks: 0,
            restarts: 0,
            scenario,
        };
        sim.start()?;
        Ok(sim)
    }

    fn start(&mut self) -> Result<(), SimError> {
        let store = Arc::new(Store::open(&self.store_path)?);
        let adapters = Adapters {
            rules: self.rules.clone(),
            circuits: self.provider.clone(),
            transfers: self.tool.clone(),
            metrics: self.metrics.clone(),
        };
        let orch = Orchestrator::new(
            store,
            adapters,
            Arc::new(self.clock.clone()),
            self.cfg.clone(),
        )
        .with_log(self.log.clone());
        orch.bootstrap(&self.sites)?;
        self.orch = Some(orch);
        Ok(())
    }

    /// Drops every piece of in-memory orchestrator state and reopens it
    /// from the store, as a process restart would.
    pub fn restart(&mut self) -> Result<(), SimError> {
        self.orch = None;
        self.restarts += 1;
        self.note("restart: orchestrator reopened from the store".into());
        self.start()
    }

    fn note(&self, message: String) {
        self.log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(LogLine {
                t: self.clock.now_ms(),
                daemon: "sim".into(),
                message,
            });
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        self.orch.as_ref().expect("orchestrator running")
    }

    pub fn store(&self) -> &Arc<Store> {
        self.orchestrator().store()
    }

    pub fn provider(&self) -> &MockCircuitProvider {
        &self.provider
    }

    pub fn transfer_tool(&self) -> &MockTransferTool {
        &self.tool
    }

    pub fn rule_source(&self) -> &MockRuleSource {
        &self.rules
    }

    pub fn now_ms(&self) -> Millis {
        self.clock.now_ms()
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.cfg
    }

    /// Rate the rule achieved during the last tick, Gbps.
    pub fn rate(&self, rule_id: &str) -> f64 {
        self.rates.get(rule_id).copied().unwrap_or(0.0)
    }

    /// Bytes delivered so far for a rule.
    pub fn delivered(&self, rule_id: &str) -> Option<f64> {
        self.flows.get(rule_id).map(|f| f.delivered)
    }

    pub fn completed_at(&self, rule_id: &str) -> Option<Millis> {
        self.flows.get(rule_id).and_then(|f| f.completed_at)
    }

    /// Appends an event to the timeline; it must not precede events
    /// already delivered.
    pub fn push_event(&mut self, event: SimEvent) {
        self.scenario.events.push(event);
    }

    /// Advances one tick.
    pub fn tick(&mut self) -> Result<(), SimError> {
        let now = self.clock.now_ms();
        self.deliver_events(now)?;
        self.fetch_endpoints();
        match self.orchestrator().step() {
            Ok(_) => {}
            Err(OrchestratorError::Crashed(point)) => {
                self.note(format!("crash injected at {point:?}"));
                self.restart()?;
            }
            Err(e) => self.note(format!("daemon pass failed: {e}")),
        }
        self.check_invariants()?;
        self.advance_flows(now);
        self.clock.advance(TICK_MS);
        self.ticks += 1;
        Ok(())
    }

    /// Ticks until virtual time reaches `t_s` seconds.
    pub fn run_until(&mut self, t_s: u64) -> Result<(), SimError> {
        while self.clock.now_ms() < t_s * 1000 {
            self.tick()?;
        }
        Ok(())
    }

    /// Runs to the scenario's `until_s`, or until the system is quiescent.
    pub fn run(mut self) -> Result<SimResult, SimError> {
        match self.scenario.until_s {
            Some(t) => self.run_until(t)?,
            None => {
                while !self.quiescent()? && self.ticks < MAX_TICKS {
                    self.tick()?;
                }
            }
        }
        self.finish()
    }

    /// Every event delivered and nothing live left in the store.
    pub fn quiescent(&self) -> Result<bool, SimError> {
        if self.next_event < self.scenario.events.len() {
            return Ok(false);
        }
        let (rules, circuits) = self.store().read(|tx| Ok((tx.rules()?, tx.circuits()?)))?;
        Ok(rules.iter().all(|r| r.state.is_terminal())
            && circuits.iter().all(|c| !c.status.holds_capacity())
            && self
                .flows
                .values()
                .all(|f| f.completed_at.is_some() || f.cancelled || !f.started))
    }

    fn deliver_events(&mut self, now: Millis) -> Result<(), SimError> {
        while let Some(ev) = self.scenario.events.get(self.next_event) {
            if ev.t * 1000 > now {
                break;
            }
            let ev = ev.clone();
            self.next_event += 1;
            self.apply_event(now, ev)?;
        }
        Ok(())
    }

    fn apply_event(&mut self, now: Millis, ev: SimEvent) -> Result<(), SimError> {
        match ev.kind {
            SimEventKind::AddRule {
                rule_id,
                src,
                dst,
                priority,
                total_bytes,
                extra_sources,
            } => {
                self.note(format!(
                    "add rule {rule_id} {src} -> {dst} priority {priority}"
                ));
                let mut sources = vec![src.clone()];
                sources.extend(extra_sources);
                self.rules.push_at(
                    now,
                    rule_id.clone(),
                    RuleEventKind::New(RuleMetadata {
                        sources,
                        destinations: vec![dst.clone()],
                        priority,
                        total_bytes,
                    }),
                );
                self.flows.insert(
                    rule_id,
                    Flow {
                        src,
                        dst,
                        total_bytes,
                        delivered: 0.0,
                        endpoints: None,
                        scale: 1.0,
                        cancelled: false,
                        completed_at: None,
                        started: false,
                    },
                );
            }
            SimEventKind::SetPriority { rule_id, priority } => {
                self.note(format!("set priority of {rule_id} to {priority}"));
                self.rules
                    .push_at(now, rule_id, RuleEventKind::PriorityChanged { priority });
            }
            SimEventKind::CancelRule { rule_id } => {
                self.note(format!("cancel rule {rule_id}"));
                if let Some(f) = self.flows.get_mut(&rule_id) {
                    f.cancelled = true;
                }
                self.rules.push_at(now, rule_id, RuleEventKind::Cancelled);
            }
            SimEventKind::Fault { adapter, count } => {
                self.note(format!("next {count} calls to {adapter:?} fail"));
                match adapter {
                    FaultTarget::RuleSource => self.rules.faults.fail_next(count),
                    FaultTarget::CircuitProvider => self.provider.faults.fail_next(count),
                    FaultTarget::TransferTool => self.tool.faults.fail_next(count),
                    FaultTarget::Metrics => self.metrics.faults.fail_next(count),
                }
            }
            SimEventKind::MetricsScale { rule_id, factor } => {
                self.note(format!("scale throughput of {rule_id} by {factor}"));
                if let Some(f) = self.flows.get_mut(&rule_id) {
                    f.scale = factor;
                }
            }
            SimEventKind::JobFailures { rule_id, count } => {
                self.note(format!("{count} file transfers of {rule_id} fail"));
                self.tool.inject_failures(&rule_id, count);
            }
            SimEventKind::Restart => self.restart()?,
            SimEventKind::Crash { point } => {
                self.note(format!("arming crash at {point:?}"));
                self.orchestrator().arm_crash(point);
            }
        }
        Ok(())
    }

    /// The data-management side asks for endpoints of rules it submitted.
    fn fetch_endpoints(&mut self) {
        let store = Arc::clone(self.store());
        let mut fetched = Vec::new();
        for (id, flow) in self.flows.iter_mut() {
            if flow.endpoints.is_some() || flow.cancelled {
                continue;
            }
            let resp = service::allocation(&store, id);
            if resp.status == 200 {
                let src = resp.body["source_endpoint"]
                    .as_str()
                    .unwrap_or_default()
                    .to_string();
                let dst = resp.body["dest_endpoint"]
                    .as_str()
                    .unwrap_or_default()
                    .to_string();
                fetched.push(format!("{id} transfers via {src} -> {dst}"));
                flow.endpoints = Some((src, dst));
            }
        }
        for msg in fetched {
            self.note(msg);
        }
    }

    fn check_invariants(&mut self) -> Result<(), SimError> {
        let store = Arc::clone(self.store());
        let (sites, circuits, rules) =
            store.read(|tx| Ok((tx.sites()?, tx.circuits()?, tx.rules()?)))?;
        let now = self.clock.now_ms();

        let usage = crate::orchestrator::site_usage(&circuits);
        let mut live: BTreeMap<&str, u64> = BTreeMap::new();
        let provider_circuits = self.provider.circuits();
        for c in provider_circuits.iter().filter(|c| !c.torn_down) {
            *live.entry(&c.request.src_site).or_default() += c.bandwidth_gbps;
            *live.entry(&c.request.dst_site).or_default() += c.bandwidth_gbps;
        }
        for s in &sites {
            let used = usage.get(&s.name).copied().unwrap_or(0);
            let real = live.get(s.name.as_str()).copied().unwrap_or(0);
            self.checks.check("capacity_safety", used <= s.port_capacity && real <= s.port_capacity, || {
                format!("t={now}: {} holds {used} Gbps recorded, {real} Gbps at the provider, capacity {}", s.name, s.port_capacity)
            });
        }

        let mut seen: BTreeMap<(&str, &str), &str> = BTreeMap::new();
        let mut exclusive = true;
        let mut clash = String::new();
        for r in rules
            .iter()
            .filter(|r| r.state.carries_endpoints() && r.state != RuleState::Finished)
        {
            for (site, ep) in [(&r.src, &r.src_endpoint), (&r.dst, &r.dst_endpoint)] {
                if let Some(ep) = ep {
                    if let Some(other) = seen.insert((site, ep), &r.rule_id) {
                        exclusive = false;
                        clash = format!("t={now}: {ep} held by {other} and {}", r.rule_id);
                    }
                }
            }
        }
        for s in &sites {
            for ep in &s.endpoints {
                if let Some(holder) = &ep.in_use_by {
                    let ok = rules.iter().any(|r| {
                        &r.rule_id == holder
                            && (r.src_endpoint.as_ref() == Some(&ep.name)
                                || r.dst_endpoint.as_ref() == Some(&ep.name))
                    });
                    if !ok {
                        exclusive = false;
                        clash = format!(
                            "t={now}: {} claimed by {holder} which does not hold it",
                            ep.name
                        );
                    }
                }
            }
        }
        self.checks
            .check("endpoint_exclusivity", exclusive, || clash);

        let doc = service::status_doc(&store)?;
        let within = doc
            .sites
            .iter()
            .all(|s| s.allocated_gbps <= s.capacity_gbps);
        self.checks
            .check("status_totals_within_capacity", within, || {
                format!("t={now}: /status reports a site above capacity")
            });
        Ok(())
    }

    fn advance_flows(&mut self, now: Millis) {
        let noise = self.scenario.model.noise_fraction;
        let per_transfer = self.scenario.model.per_transfer_rate_gbps;
        let active = self.provider.active_circuits();
        let circuit_for = |eps: &(String, String)| {
            active.iter().find(|c| {
                let (a, b) = (&c.request.src_endpoint, &c.request.dst_endpoint);
                (a == &eps.0 && b == &eps.1) || (a == &eps.1 && b == &eps.0)
            })
        };

        // Bandwidth of every moving flow, grouped by directed site pair so
        // the link's transfer slots are shared in proportion.
        let mut moving: Vec<(String, u64)> = Vec::new();
        let mut link_bw: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (id, f) in &self.flows {
            if f.cancelled || f.completed_at.is_some() {
                continue;
            }
            if let Some(c) = f.endpoints.as_ref().and_then(circuit_for) {
                moving.push((id.clone(), c.bandwidth_gbps));
                *link_bw.entry((f.src.clone(), f.dst.clone())).or_default() += c.bandwidth_gbps;
            }
        }

        self.rates.clear();
        let t_rec = now + TICK_MS;
        let mut completed = Vec::new();
        for (id, bw) in moving {
            let flow = self.flows.get_mut(&id).expect("flow exists");
            if !flow.started {
                flow.started = true;
                self.tool.register_rule(&id);
            }
            let link = (flow.src.clone(), flow.dst.clone());
            let slots = self
                .tool
                .active(&link.0, &link.1)
                .unwrap_or(self.cfg.tuning.min_active) as f64;
            let share = bw as f64 / link_bw[&link].max(1) as f64;
            let jitter = if noise > 0.0 {
                self.rng.gen_range(-noise..=noise)
            } else {
                0.0
            };
            let rate = (bw as f64).min(slots * per_transfer * share) * (1.0 + jitter) * flow.scale;
            self.checks.check(
                "rate_within_allocation",
                rate <= bw as f64 * (1.0 + noise) + 1e-9,
                || format!("t={now}: {id} moved {rate:.3} Gbps on a {bw} Gbps circuit"),
            );

            let remaining = flow.total_bytes as f64 - flow.delivered;
            let bytes = (rate * 1e9 / 8.0 * (TICK_MS as f64 / 1000.0)).min(remaining.max(0.0));
            let effective = bytes * 8.0 / 1e9 / (TICK_MS as f64 / 1000.0);
            flow.delivered += bytes;
            let (src_ep, dst_ep) = flow.endpoints.clone().expect("moving flows have endpoints");
            self.metrics.record(&src_ep, t_rec, effective);
            self.metrics.record(&dst_ep, t_rec, effective);
            let files =
                (flow.delivered / self.scenario.model.file_size_bytes as f64).floor() as u64;
            let per_file = if slots > 0.0 { effective / slots } else { 0.0 };
            self.rates.insert(id.clone(), effective);

            let done = flow.delivered >= flow.total_bytes as f64;
            self.checks.check(
                "byte_conservation",
                flow.delivered <= flow.total_bytes as f64 + 1e-6,
                || {
                    format!(
                        "t={now}: {id} delivered {} of {} bytes",
                        flow.delivered, flow.total_bytes
                    )
                },
            );
            if done {
                flow.completed_at = Some(t_rec);
                let all_files = flow
                    .total_bytes
                    .div_ceil(self.scenario.model.file_size_bytes);
                self.tool.record_progress(&id, all_files, per_file);
                completed.push(id.clone());
            } else {
                self.tool.record_progress(&id, files, per_file);
            }
        }
        for id in completed {
            self.rules
                .push_at(t_rec, id.clone(), RuleEventKind::Completed);
            self.log
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .push(LogLine {
                    t: t_rec,
                    daemon: "sim".into(),
                    message: format!("{id} transfer complete"),
                });
        }
    }

    /// Final assertions and snapshot.
    pub fn finish(self) -> Result<SimResult, SimError> {
        let snapshot = self.store().snapshot()?;
        let mut assertions = Vec::new();
        for (name, count) in &self.checks.counts {
            let v = &self.checks.violations[name];
            assertions.push(Assertion {
                name: name.to_string(),
                passed: v.is_empty(),
                detail: if v.is_empty() {
                    format!("held on {count} checks")
                } else {
                    v.join("; ")
                },
            });
        }
        let stuck: Vec<&str> = snapshot
            .rules
            .iter()
            .filter(|r| !r.state.is_terminal())
            .map(|r| r.rule_id.as_str())
            .collect();
        if self.scenario.until_s.is_none() {
            assertions.push(Assertion {
                name: "liveness".into(),
                passed: stuck.is_empty(),
                detail: if stuck.is_empty() {
                    format!("all {} rules terminal", snapshot.rules.len())
                } else {
                    format!("rules not terminal: {}", stuck.join(", "))
                },
            });
        }
        let finished: BTreeSet<&str> = snapshot
            .rules
            .iter()
            .filter(|r| r.state == RuleState::Finished)
            .map(|r| r.rule_id.as_str())
            .collect();
        let reported: BTreeSet<&str> = snapshot
            .reports
            .iter()
            .map(|r| r.rule_id.as_str())
            .collect();
        let unreported: Vec<&&str> = finished.difference(&reported).collect();
        assertions.push(Assertion {
            name: "finished_rules_reported".into(),
            passed: unreported.is_empty(),
            detail: format!("{} finished, {} reports", finished.len(), reported.len()),
        });

        let log = self.log.lock().unwrap_or_else(|e| e.into_inner()).clone();
        Ok(SimResult {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            ticks: self.ticks,
            end_ms: self.clock.now_ms(),
            restarts: self.restarts,
            log,
            completion_ms: self
                .flows
                .iter()
                .filter_map(|(id, f)| f.completed_at.map(|t| (id.clone(), t)))
                .collect(),
            provider_calls: self.provider.calls(),
            assertions,
            snapshot,
        })
    }
}

/// Runs a scenario to completion.
pub fn run(scenario: Scenario) -> Result<SimResult, SimError> {
    Simulation::new(scenario)?.run()
}
