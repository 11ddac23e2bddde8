//! Deterministic in-process adapters with call counting and fault injection.
//!
//! All state lives behind mutexes in ordered maps so identical call
//! sequences produce identical results.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use indexmap::IndexMap;

use super::*;
use crate::clock::Clock;
use crate::model::Millis;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Budget of upcoming calls that should fail.
#[derive(Debug, Default)]
pub struct FaultBudget(AtomicU32);

impl FaultBudget {
    pub fn fail_next(&self, n: u32) {
        self.0.fetch_add(n, Ordering::SeqCst);
    }

    /// Consumes one unit of the budget, returning true if this call must fail.
    pub fn take(&self) -> bool {
        self.0
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
    }

    pub fn remaining(&self) -> u32 {
        self.0.load(Ordering::SeqCst)
    }
}

// --- rule source -------------------------------------------------------------

#[derive(Debug)]
struct ScriptedEvent {
    visible_at: Millis,
    event: RuleEvent,
}

/// Replays a script of rule events. Each event becomes visible once the
/// clock reaches its time; events must be appended in time order.
pub struct MockRuleSource {
    clock: Arc<dyn Clock>,
    events: Mutex<Vec<ScriptedEvent>>,
    pub faults: FaultBudget,
    polls: AtomicU32,
}

impl MockRuleSource {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        MockRuleSource {
            clock,
            events: Mutex::new(Vec::new()),
            faults: FaultBudget::default(),
            polls: AtomicU32::new(0),
        }
    }

    /// Appends an event that becomes visible at `at`.
    pub fn push_at(
        &self,
        at: Millis,
        rule_id: impl Into<String>,
        kind: RuleEventKind,
    ) -> EventCursor {
        let mut events = lock(&self.events);
        let seq = events.len() as EventCursor + 1;
        if let Some(last) = events.last() {
            assert!(
                at >= last.visible_at,
                "scripted events must be time ordered"
            );
        }
        events.push(ScriptedEvent {
            visible_at: at,
            event: RuleEvent {
                seq,
                rule_id: rule_id.into(),
                kind,
            },
        });
        seq
    }

    /// Appends an event visible immediately.
    pub fn push(&self, rule_id: impl Into<String>, kind: RuleEventKind) -> EventCursor {
        let now = self.clock.now_ms();
        let at = lock(&self.events)
            .last()
            .map_or(now, |e| e.visible_at.max(now));
        self.push_at(at, rule_id, kind)
    }

    pub fn poll_count(&self) -> u32 {
        self.polls.load(Ordering::SeqCst)
    }
}

impl RuleSource for MockRuleSource {
    fn poll(&self, since: EventCursor) -> AdapterResult<RuleBatch> {
        self.polls.fetch_add(1, Ordering::SeqCst);
        if self.faults.take() {
            return Err(AdapterError::SourceUnavailable("injected fault".into()));
        }
        let now = self.clock.now_ms();
        let events: Vec<RuleEvent> = lock(&self.events)
            .iter()
            .filter(|e| e.event.seq > since)
            .take_while(|e| e.visible_at <= now)
            .map(|e| e.event.clone())
            .collect();
        let cursor = events.last().map_or(since, |e| e.seq);
        Ok(RuleBatch { events, cursor })
    }
}

// --- circuit provider --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockCircuit {
    pub circuit_id: String,
    pub request: CircuitRequest,
    pub bandwidth_gbps: Gbps,
    pub ready_at: Millis,
    pub torn_down: bool,
}

/// Counters the tests assert on.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCalls {
    /// Circuits actually created (replayed idempotent creates excluded).
    pub creates: u32,
    /// Create calls that returned an existing circuit for a known key.
    pub create_replays: u32,
    pub modifies: u32,
    pub teardowns: u32,
    pub failures: u32,
    /// Actual creates per idempotency key.
    pub creates_by_key: BTreeMap<String, u32>,
    /// Successful modifies per circuit.
    pub modifies_by_circuit: BTreeMap<String, u32>,
}

#[derive(Debug, Default)]
struct ProviderState {
    circuits: BTreeMap<String, MockCircuit>,
    by_key: BTreeMap<String, String>,
    calls: ProviderCalls,
    log: Vec<(Millis, String)>,
    next_id: u64,
}

pub struct MockCircuitProvider {
    clock: Arc<dyn Clock>,
    inventory: IndexMap<String, Vec<String>>,
    provision_delay_ms: Millis,
    state: Mutex<ProviderState>,
    pub faults: FaultBudget,
}

impl MockCircuitProvider {
    pub const DEFAULT_PROVISION_DELAY_MS: Millis = 2_000;

    /// `inventory` maps each configured site to its endpoint names.
    pub fn new(clock: Arc<dyn Clock>, inventory: IndexMap<String, Vec<String>>) -> Self {
        MockCircuitProvider {
            clock,
            inventory,
            provision_delay_ms: Self::DEFAULT_PROVISION_DELAY_MS,
            state: Mutex::new(ProviderState::default()),
            faults: FaultBudget::default(),
        }
    }

    pub fn with_provision_delay(mut self, delay_ms: Millis) -> Self {
        self.provision_delay_ms = delay_ms;
        self
    }

    pub fn calls(&self) -> ProviderCalls {
        lock(&self.state).calls.clone()
    }

    /// Chronological record of successful mutating calls.
    pub fn call_log(&self) -> Vec<(Millis, String)> {
        lock(&self.state).log.clone()
    }

    pub fn circuits(&self) -> Vec<MockCircuit> {
        lock(&self.state).circuits.values().cloned().collect()
    }

    /// Live circuits that are carrying traffic at the current time.
    pub fn active_circuits(&self) -> Vec<MockCircuit> {
        let now = self.clock.now_ms();
        self.circuits()
            .into_iter()
            .filter(|c| !c.torn_down && c.ready_at <= now)
            .collect()
    }

    fn injected(&self, state: &mut ProviderState, op: &str) -> AdapterResult<()> {
        if self.faults.take() {
            state.calls.failures += 1;
            return Err(AdapterError::Provider(format!("injected fault on {op}")));
        }
        Ok(())
    }

    fn busy(state: &ProviderState, endpoint: &str) -> bool {
        state.circuits.values().any(|c| {
            !c.torn_down
                && (c.request.src_endpoint == endpoint || c.request.dst_endpoint == endpoint)
        })
    }
}

impl CircuitProvider for MockCircuitProvider {
    fn list_endpoints(&self, site: &str) -> AdapterResult<Vec<Endpoint>> {
        let names = self
            .inventory
            .get(site)
            .ok_or_else(|| AdapterError::UnknownSite(site.to_string()))?;
        Ok(names
            .iter()
            .map(|n| Endpoint::new(n.clone(), site))
            .collect())
    }

    fn create(&self, req: &CircuitRequest) -> AdapterResult<String> {
        let now = self.clock.now_ms();
        let mut state = lock(&self.state);
        if let Some(id) = state.by_key.get(&req.idempotency_key).cloned() {
            let live = state.circuits.get(&id).is_some_and(|c| !c.torn_down);
            if live {
                state.calls.create_replays += 1;
                return Ok(id);
            }
        }
        self.injected(&mut state, "create")?;
        for (site, ep) in [
            (&req.src_site, &req.src_endpoint),
            (&req.dst_site, &req.dst_endpoint),
        ] {
            let known = self
                .inventory
                .get(site)
                .ok_or_else(|| AdapterError::UnknownSite(site.clone()))?;
            if !known.contains(ep) {
                return Err(AdapterError::InvalidRequest(format!(
                    "endpoint {ep} not at {site}"
                )));
            }
        }
        if req.src_site == req.dst_site {
            return Err(AdapterError::InvalidRequest(
                "endpoints at the same site".into(),
            ));
        }
        if req.bandwidth_gbps == 0 {
            return Err(AdapterError::InvalidRequest("zero bandwidth".into()));
        }
        for ep in [&req.src_endpoint, &req.dst_endpoint] {
            if Self::busy(&state, ep) {
                return Err(AdapterError::EndpointBusy(ep.clone()));
            }
        }
        state.next_id += 1;
        let id = format!("ckt-{:04}", state.next_id);
        state.circuits.insert(
            id.clone(),
            MockCircuit {
                circuit_id: id.clone(),
                request: req.clone(),
                bandwidth_gbps: req.bandwidth_gbps,
                ready_at: now + self.provision_delay_ms,
                torn_down: false,
            },
        );
        state.by_key.insert(req.idempotency_key.clone(), id.clone());
        state.calls.creates += 1;
        *state
            .calls
            .creates_by_key
            .entry(req.idempotency_key.clone())
            .or_default() += 1;
        state.log.push((
            now,
            format!(
                "create {id} {}<->{} {} Gbps",
                req.src_endpoint, req.dst_endpoint, req.bandwidth_gbps
            ),
        ));
        Ok(id)
    }

    fn status(&self, circuit_id: &str) -> AdapterResult<ProviderCircuit> {
        let now = self.clock.now_ms();
        let state = lock(&self.state);
        let c = state
            .circuits
            .get(circuit_id)
            .ok_or_else(|| AdapterError::UnknownCircuit(circuit_id.to_string()))?;
        let status = if c.torn_down {
            ProviderStatus::TornDown
        } else if c.ready_at <= now {
            ProviderStatus::Active
        } else {
            ProviderStatus::Pending
        };
        Ok(ProviderCircuit {
            circuit_id: c.circuit_id.clone(),
            status,
            bandwidth_gbps: c.bandwidth_gbps,
        })
    }

    fn modify(&self, circuit_id: &str, bandwidth_gbps: Gbps) -> AdapterResult<()> {
        let now = self.clock.now_ms();
        let mut state = lock(&self.state);
        if !state.circuits.get(circuit_id).is_some_and(|c| !c.torn_down) {
            return Err(AdapterError::UnknownCircuit(circuit_id.to_string()));
        }
        self.injected(&mut state, "modify")?;
        if bandwidth_gbps == 0 {
            return Err(AdapterError::InvalidRequest("zero bandwidth".into()));
        }
        let c = state.circuits.get_mut(circuit_id).expect("checked above");
        let old = c.bandwidth_gbps;
        c.bandwidth_gbps = bandwidth_gbps;
        state.calls.modifies += 1;
        *state
            .calls
            .modifies_by_circuit
            .entry(circuit_id.to_string())
            .or_default() += 1;
        state.log.push((
            now,
            format!("modify {circuit_id} {old} -> {bandwidth_gbps} Gbps"),
        ));
        Ok(())
    }

    fn teardown(&self, circuit_id: &str) -> AdapterResult<()> {
        let now = self.clock.now_ms();
        let mut state = lock(&self.state);
        if !state.circuits.get(circuit_id).is_some_and(|c| !c.torn_down) {
            return Err(AdapterError::UnknownCircuit(circuit_id.to_string()));
        }
        self.injected(&mut state, "teardown")?;
        state
            .circuits
            .get_mut(circuit_id)
            .expect("checked above")
            .torn_down = true;
        state.calls.teardowns += 1;
        state.log.push((now, format!("teardown {circuit_id}")));
        Ok(())
    }
}

// --- transfer tool -------------------------------------------------------------

#[derive(Default)]
pub struct MockTransferTool {
    links: Mutex<BTreeMap<(String, String), u32>>,
    jobs: Mutex<BTreeMap<String, JobStats>>,
    set_active_calls: AtomicU32,
    pub faults: FaultBudget,
}

impl MockTransferTool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Active transfer count last set for the link, if any.
    pub fn active(&self, src: &str, dst: &str) -> Option<u32> {
        lock(&self.links)
            .get(&(src.to_string(), dst.to_string()))
            .copied()
    }

    pub fn set_active_calls(&self) -> u32 {
        self.set_active_calls.load(Ordering::SeqCst)
    }

    pub fn register_rule(&self, rule_id: &str) {
        lock(&self.jobs)
            .entry(rule_id.to_string())
            .or_insert_with(|| JobStats::empty(rule_id));
    }

    /// Records job-level progress for a rule.
    pub fn record_progress(&self, rule_id: &str, finished_files: u64, avg_throughput: f64) {
        let mut jobs = lock(&self.jobs);
        let stats = jobs
            .entry(rule_id.to_string())
            .or_insert_with(|| JobStats::empty(rule_id));
        stats.finished = finished_files;
        stats.avg_file_throughput = avg_throughput;
    }

    /// Records `n` failed file transfers, each retried.
    pub fn inject_failures(&self, rule_id: &str, n: u64) {
        let mut jobs = lock(&self.jobs);
        let stats = jobs
            .entry(rule_id.to_string())
            .or_insert_with(|| JobStats::empty(rule_id));
        stats.failed += n;
        stats.retried += n;
    }
}

impl TransferTool for MockTransferTool {
    fn set_active(&self, src_site: &str, dst_site: &str, active: u32) -> AdapterResult<()> {
        if self.faults.take() {
            return Err(AdapterError::ToolUnavailable("injected fault".into()));
        }
        if active == 0 {
            return Err(AdapterError::InvalidRequest(
                "active count must be >= 1".into(),
            ));
        }
        self.set_active_calls.fetch_add(1, Ordering::SeqCst);
        lock(&self.links).insert((src_site.to_string(), dst_site.to_string()), active);
        Ok(())
    }

    fn job_stats(&self, rule_id: &str) -> AdapterResult<JobStats> {
        lock(&self.jobs)
            .get(rule_id)
            .cloned()
            .ok_or_else(|| AdapterError::UnknownRule(rule_id.to_string()))
    }
}

// --- metrics source ------------------------------------------------------------

/// Per-endpoint rate history. Safe for concurrent readers.
pub struct MockMetricsSource {
    clock: Arc<dyn Clock>,
    series: RwLock<BTreeMap<String, Vec<(Millis, f64)>>>,
    known: RwLock<BTreeSet<String>>,
    pub faults: FaultBudget,
}

impl MockMetricsSource {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        MockMetricsSource {
            clock,
            series: RwLock::new(BTreeMap::new()),
            known: RwLock::new(BTreeSet::new()),
            faults: FaultBudget::default(),
        }
    }

    pub fn register_endpoint(&self, endpoint: &str) {
        self.known
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(endpoint.to_string());
    }

    /// Records the rate observed on `endpoint` at time `t`.
    pub fn record(&self, endpoint: &str, t: Millis, gbps: f64) {
        self.register_endpoint(endpoint);
        self.series
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .entry(endpoint.to_string())
            .or_default()
            .push((t, gbps));
    }
}

impl MetricsSource for MockMetricsSource {
    fn throughput(&self, endpoint: &str, window_s: u64) -> AdapterResult<f64> {
        if self.faults.take() {
            return Err(AdapterError::NoData(format!("{endpoint} (injected fault)")));
        }
        if !self
            .known
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .contains(endpoint)
        {
            return Err(AdapterError::NoData(endpoint.to_string()));
        }
        let now = self.clock.now_ms();
        let window_ms = window_s * 1000;
        let series = self.series.read().unwrap_or_else(|e| e.into_inner());
        let window: Vec<f64> = series
            .get(endpoint)
            .map(|s| {
                s.iter()
                    .filter(|(t, _)| *t <= now && *t + window_ms > now)
                    .map(|(_, v)| *v)
                    .collect()
            })
            .unwrap_or_default();
        if window.is_empty() {
            return Ok(0.0);
        }
        Ok(window.iter().sum::<f64>() / window.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;

    fn clock() -> (VirtualClock, Arc<dyn Clock>) {
        let c = VirtualClock::new();
        let dynamic: Arc<dyn Clock> = Arc::new(c.clone());
        (c, dynamic)
    }

    fn meta() -> RuleMetadata {
        RuleMetadata {
            sources: vec!["A".into()],
            destinations: vec!["B".into()],
            priority: 3,
            total_bytes: 10,
        }
    }

    fn inventory() -> IndexMap<String, Vec<String>> {
        let mut inv = IndexMap::new();
        inv.insert("A".to_string(), vec!["a1".into(), "a2".into(), "a3".into()]);
        inv.insert("B".to_string(), vec!["b1".into()]);
        inv
    }

    fn request(key: &str, src_ep: &str) -> CircuitRequest {
        CircuitRequest {
            src_site: "A".into(),
            dst_site: "B".into(),
            src_endpoint: src_ep.into(),
            dst_endpoint: "b1".into(),
            bandwidth_gbps: 100,
            idempotency_key: key.into(),
        }
    }

    #[test]
    fn rule_source_scripted_and_at_most_once() {
        let (vc, c) = clock();
        let src = MockRuleSource::new(c);
        src.push_at(0, "r1", RuleEventKind::New(meta()));
        src.push_at(5_000, "r1", RuleEventKind::PriorityChanged { priority: 8 });

        vc.set(1_000);
        let batch = src.poll(0).unwrap();
        assert_eq!(batch.events.len(), 1);
        assert!(matches!(batch.events[0].kind, RuleEventKind::New(_)));
        let again = src.poll(batch.cursor).unwrap();
        assert!(again.events.is_empty());
        assert_eq!(again.cursor, batch.cursor);

        vc.set(6_000);
        let batch2 = src.poll(batch.cursor).unwrap();
        assert_eq!(
            batch2.events[0].kind,
            RuleEventKind::PriorityChanged { priority: 8 }
        );
    }

    #[test]
    fn rule_source_fault_loses_nothing() {
        let (_, c) = clock();
        let src = MockRuleSource::new(c);
        src.push("r1", RuleEventKind::New(meta()));
        src.faults.fail_next(1);
        assert!(matches!(
            src.poll(0),
            Err(AdapterError::SourceUnavailable(_))
        ));
        assert_eq!(src.poll(0).unwrap().events.len(), 1);
    }

    #[test]
    fn endpoint_inventory() {
        let (_, c) = clock();
        let p = MockCircuitProvider::new(c, inventory());
        let eps = p.list_endpoints("A").unwrap();
        assert_eq!(eps.len(), 3);
        assert_eq!(eps, p.list_endpoints("A").unwrap());
        assert_eq!(
            p.list_endpoints("Z"),
            Err(AdapterError::UnknownSite("Z".into()))
        );
    }

    #[test]
    fn create_becomes_active_after_delay() {
        let (vc, c) = clock();
        let p = MockCircuitProvider::new(c, inventory());
        let id = p.create(&request("r1", "a1")).unwrap();
        assert_eq!(p.status(&id).unwrap().status, ProviderStatus::Pending);
        vc.set(1_999);
        assert_eq!(p.status(&id).unwrap().status, ProviderStatus::Pending);
        vc.set(2_000);
        assert_eq!(p.status(&id).unwrap().status, ProviderStatus::Active);
    }

    #[test]
    fn create_is_idempotent_per_key() {
        let (_, c) = clock();
        let p = MockCircuitProvider::new(c, inventory());
        let a = p.create(&request("r1", "a1")).unwrap();
        let b = p.create(&request("r1", "a1")).unwrap();
        assert_eq!(a, b);
        let calls = p.calls();
        assert_eq!(calls.creates, 1);
        assert_eq!(calls.create_replays, 1);
    }

    #[test]
    fn busy_endpoint_rejected() {
        let (_, c) = clock();
        let p = MockCircuitProvider::new(c, inventory());
        p.create(&request("r1", "a1")).unwrap();
        assert_eq!(
            p.create(&request("r2", "a2")),
            Err(AdapterError::EndpointBusy("b1".into()))
        );
    }

    #[test]
    fn fails_twice_then_succeeds() {
        let (_, c) = clock();
        let p = MockCircuitProvider::new(c, inventory());
        p.faults.fail_next(2);
        assert!(p.create(&request("r1", "a1")).is_err());
        assert!(p.create(&request("r1", "a1")).is_err());
        assert!(p.create(&request("r1", "a1")).is_ok());
        assert_eq!(p.calls().failures, 2);
    }

    #[test]
    fn modify_and_teardown() {
        let (_, c) = clock();
        let p = MockCircuitProvider::new(c, inventory());
        let id = p.create(&request("r1", "a1")).unwrap();
        p.modify(&id, 200).unwrap();
        assert_eq!(p.status(&id).unwrap().bandwidth_gbps, 200);
        assert_eq!(
            p.modify("nope", 1),
            Err(AdapterError::UnknownCircuit("nope".into()))
        );
        p.teardown(&id).unwrap();
        assert_eq!(
            p.teardown(&id),
            Err(AdapterError::UnknownCircuit(id.clone()))
        );
        // Endpoints are reusable once torn down.
        p.create(&request("r2", "a1")).unwrap();
    }

    #[test]
    fn transfer_tool_records() {
        let t = MockTransferTool::new();
        t.set_active("A", "B", 100).unwrap();
        assert_eq!(t.active("A", "B"), Some(100));
        assert!(t.set_active("A", "B", 0).is_err());
        t.register_rule("r1");
        assert_eq!(t.job_stats("r1").unwrap(), JobStats::empty("r1"));
        t.inject_failures("r1", 2);
        assert_eq!(t.job_stats("r1").unwrap().failed, 2);
        assert!(matches!(
            t.job_stats("zz"),
            Err(AdapterError::UnknownRule(_))
        ));
    }

    #[test]
    fn metrics_window_mean() {
        let (vc, c) = clock();
        let m = MockMetricsSource::new(c);
        m.register_endpoint("idle");
        assert_eq!(m.throughput("idle", 60).unwrap(), 0.0);
        assert!(matches!(
            m.throughput("ghost", 60),
            Err(AdapterError::NoData(_))
        ));
        for t in 1..=60 {
            m.record("busy", t * 1000, if t <= 30 { 40.0 } else { 80.0 });
        }
        vc.set(60_000);
        assert!((m.throughput("busy", 30).unwrap() - 80.0).abs() < 1e-12);
        assert!((m.throughput("busy", 60).unwrap() - 60.0).abs() < 1e-12);
        assert_eq!(m.throughput("busy", 1).unwrap(), 80.0);
    }
}
