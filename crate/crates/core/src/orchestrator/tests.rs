use super::*;
use crate::adapters::mock::{
    MockCircuitProvider, MockMetricsSource, MockRuleSource, MockTransferTool,
};
use crate::adapters::RuleMetadata;
use crate::clock::VirtualClock;
use indexmap::IndexMap;

struct Harness {
    clock: VirtualClock,
    rules: Arc<MockRuleSource>,
    provider: Arc<MockCircuitProvider>,
    tool: Arc<MockTransferTool>,
    orch: Orchestrator,
}

impl Harness {
    fn new(sites: &[(&str, Gbps, usize)]) -> Harness {
        let clock = VirtualClock::new();
        let dyn_clock: Arc<dyn Clock> = Arc::new(clock.clone());
        let inventory: IndexMap<String, Vec<String>> = sites
            .iter()
            .map(|(n, _, k)| {
                let eps = (1..=*k)
                    .map(|i| format!("{}{i}", n.to_lowercase()))
                    .collect();
                (n.to_string(), eps)
            })
            .collect();
        let rules = Arc::new(MockRuleSource::new(dyn_clock.clone()));
        let provider = Arc::new(
            MockCircuitProvider::new(dyn_clock.clone(), inventory).with_provision_delay(1_000),
        );
        let tool = Arc::new(MockTransferTool::new());
        let metrics = Arc::new(MockMetricsSource::new(dyn_clock.clone()));
        let adapters = Adapters {
            rules: rules.clone(),
            circuits: provider.clone(),
            transfers: tool.clone(),
            metrics,
        };
        let store = Arc::new(Store::open_in_memory().unwrap());
        let orch = Orchestrator::new(store, adapters, dyn_clock, OrchestratorConfig::default());
        let site_list: Vec<Site> = sites.iter().map(|(n, c, _)| Site::new(*n, *c)).collect();
        orch.bootstrap(&site_list).unwrap();
        Harness {
            clock,
            rules,
            provider,
            tool,
            orch,
        }
    }

    fn add(&self, id: &str, src: &str, dst: &str, priority: u64) {
        self.rules.push(
            id,
            RuleEventKind::New(RuleMetadata {
                sources: vec![src.into()],
                destinations: vec![dst.into()],
                priority,
                total_bytes: 1_000_000_000,
            }),
        );
    }

    fn rule(&self, id: &str) -> TransferRule {
        self.orch.store().read(|tx| tx.rule(id)).unwrap().unwrap()
    }

    fn circuit(&self, id: &str) -> Circuit {
        self.orch
            .store()
            .read(|tx| tx.circuit(id))
            .unwrap()
            .unwrap()
    }

    fn step_for(&self, secs: u64) {
        for _ in 0..secs {
            self.orch.step().unwrap();
            self.clock.advance(1_000);
        }
    }
}

fn four_site() -> Harness {
    let h = Harness::new(&[
        ("UCSD", 400, 4),
        ("Caltech", 400, 4),
        ("FNAL", 200, 4),
        ("Nebraska", 100, 4),
    ]);
    h.add("r1", "UCSD", "Caltech", 5);
    h.add("r2", "UCSD", "Caltech", 3);
    h.add("r3", "UCSD", "FNAL", 3);
    h.add("r4", "Caltech", "FNAL", 4);
    h.add("r5", "FNAL", "Nebraska", 2);
    h
}

#[test]
fn ingest_creates_rules_and_persists_cursor() {
    let h = Harness::new(&[("A", 100, 2), ("B", 100, 2)]);
    h.add("r1", "A", "B", 1);
    h.rules.push(
        "multi",
        RuleEventKind::New(RuleMetadata {
            sources: vec!["A".into(), "B".into()],
            destinations: vec!["B".into()],
            priority: 1,
            total_bytes: 1,
        }),
    );
    h.add("elsewhere", "A", "Z", 1);
    assert_eq!(h.orch.ingest().unwrap(), 3);
    let rules = h.orch.store().read(|tx| tx.rules()).unwrap();
    assert_eq!(rules.len(), 1);
    assert_eq!(rules[0].state, RuleState::Initialized);
    // Nothing new: the stored cursor prevents a replay.
    assert_eq!(h.orch.ingest().unwrap(), 0);
    assert_eq!(h.orch.store().read(|tx| tx.rule_cursor()).unwrap(), 3);
}

#[test]
fn source_outage_does_not_stop_the_pass() {
    let h = Harness::new(&[("A", 100, 2), ("B", 100, 2)]);
    h.add("r1", "A", "B", 1);
    h.rules.faults.fail_next(1);
    h.orch.step().unwrap();
    assert!(h.orch.store().read(|tx| tx.rules()).unwrap().is_empty());
    h.orch.step().unwrap();
    assert_eq!(h.rule("r1").state, RuleState::Provisioning);
}

#[test]
fn endpoints_are_lowest_free_and_exclusive() {
    let h = Harness::new(&[("A", 100, 2), ("B", 100, 1)]);
    h.add("r1", "A", "B", 1);
    h.add("r2", "A", "B", 1);
    h.orch.ingest().unwrap();
    assert_eq!(h.orch.assign_endpoints().unwrap(), 1);
    let r1 = h.rule("r1");
    assert_eq!(r1.state, RuleState::Allocated);
    assert_eq!(r1.src_endpoint.as_deref(), Some("a1"));
    assert_eq!(r1.dst_endpoint.as_deref(), Some("b1"));
    // B has one endpoint; r2 waits.
    assert_eq!(h.rule("r2").state, RuleState::Initialized);
    assert_eq!(h.orch.assign_endpoints().unwrap(), 0);
}

#[test]
fn decision_reproduces_the_worked_example() {
    let h = four_site();
    h.orch.ingest().unwrap();
    h.orch.assign_endpoints().unwrap();
    assert_eq!(h.orch.decide().unwrap(), 5);
    let got: Vec<_> = ["r1", "r2", "r3", "r4", "r5"]
        .iter()
        .map(|id| h.rule(id).allocated_gbps.unwrap())
        .collect();
    assert_eq!(got, [210, 125, 65, 65, 70]);
    assert!(["r1", "r5"]
        .iter()
        .all(|id| h.rule(id).state == RuleState::Decided));
}

#[test]
fn provisioning_reaches_provisioned_and_tunes_links() {
    let h = four_site();
    h.step_for(3);
    for id in ["r1", "r2", "r3", "r4", "r5"] {
        let r = h.rule(id);
        assert_eq!(r.state, RuleState::Provisioned, "{id}");
        let c = h.circuit(r.circuit_id.as_deref().unwrap());
        assert_eq!(c.status, CircuitStatus::Active);
        assert_eq!(Some(c.bandwidth_gbps), r.allocated_gbps);
    }
    assert_eq!(h.provider.calls().creates, 5);
    // UCSD -> Caltech carries 335 Gbps at 50 ms: 2 Gbps per transfer.
    assert_eq!(h.tool.active("UCSD", "Caltech"), Some(168));
    assert_eq!(h.tool.active("FNAL", "Nebraska"), Some(35));
}

#[test]
fn create_failures_back_off_then_fail() {
    let h = Harness::new(&[("A", 100, 2), ("B", 100, 2)]);
    h.add("r1", "A", "B", 1);
    h.provider.faults.fail_next(100);
    h.orch.step().unwrap();
    let r = h.rule("r1");
    assert_eq!(
        (r.state, r.attempts, r.retry_at),
        (RuleState::Decided, 1, Some(1_000))
    );
    // Not due yet: no further call.
    h.orch.step().unwrap();
    assert_eq!(h.rule("r1").attempts, 1);
    h.step_for(30);
    let r = h.rule("r1");
    assert_eq!(r.state, RuleState::Failed);
    assert_eq!(h.provider.calls().failures, 4);
    // Failure releases the endpoints.
    let sites = h.orch.store().read(|tx| tx.sites()).unwrap();
    assert!(sites
        .iter()
        .all(|s| s.endpoints.iter().all(|e| e.is_free())));
}

#[test]
fn priority_change_modifies_within_one_cycle() {
    let h = four_site();
    h.step_for(3);
    let before = h.provider.calls().modifies;
    h.rules
        .push("r2", RuleEventKind::PriorityChanged { priority: 10 });
    h.orch.step().unwrap();
    assert_eq!(h.rule("r1").allocated_gbps, Some(110));
    assert_eq!(h.rule("r2").allocated_gbps, Some(225));
    assert_eq!(h.provider.calls().modifies - before, 2);
    assert_eq!(h.rule("r2").state, RuleState::Provisioned);
}

#[test]
fn finished_rule_parks_circuit_and_next_rule_reuses_it() {
    let h = Harness::new(&[("A", 100, 2), ("B", 100, 2)]);
    h.add("a", "A", "B", 1);
    h.step_for(3);
    h.rules.push("a", RuleEventKind::Completed);
    h.step_for(1);
    let a = h.rule("a");
    assert_eq!(a.state, RuleState::Finished);
    let c = h.circuit(a.circuit_id.as_deref().unwrap());
    assert_eq!(
        (c.status, c.bandwidth_gbps, c.rule_id.clone()),
        (CircuitStatus::Stale, 5, None)
    );
    assert!(h.orch.store().read(|tx| tx.report("a")).unwrap().is_some());

    h.clock.advance(100_000);
    h.add("b", "A", "B", 1);
    h.step_for(2);
    let b = h.rule("b");
    assert_eq!(b.state, RuleState::Provisioned);
    assert_eq!(b.circuit_id, a.circuit_id);
    assert_eq!(h.circuit(&c.circuit_id).bandwidth_gbps, 100);
    let calls = h.provider.calls();
    assert_eq!((calls.creates, calls.teardowns), (1, 0));
}

#[test]
fn reaper_honors_the_window_boundary() {
    let h = Harness::new(&[("A", 100, 2), ("B", 100, 2)]);
    h.add("a", "A", "B", 1);
    h.step_for(3);
    h.rules.push("a", RuleEventKind::Completed);
    h.orch.step().unwrap();
    let cid = h.rule("a").circuit_id.unwrap();
    let since = h.circuit(&cid).stale_since.unwrap();

    h.clock.set(since + 599_000);
    assert_eq!(h.orch.reap().unwrap(), 0);
    h.clock.set(since + 600_000);
    assert_eq!(h.orch.reap().unwrap(), 0);
    h.clock.set(since + 601_000);
    assert_eq!(h.orch.reap().unwrap(), 1);
    assert_eq!(h.circuit(&cid).status, CircuitStatus::TornDown);
    assert_eq!(h.provider.calls().teardowns, 1);
    let sites = h.orch.store().read(|tx| tx.sites()).unwrap();
    assert!(sites
        .iter()
        .all(|s| s.endpoints.iter().all(|e| e.is_free())));
}

#[test]
fn stale_circuit_bandwidth_is_held_back_from_allocation() {
    let h = Harness::new(&[("A", 100, 2), ("B", 100, 2), ("C", 100, 2)]);
    h.add("a", "A", "B", 1);
    h.step_for(3);
    h.rules.push("a", RuleEventKind::Completed);
    h.orch.step().unwrap();
    // A rule on another pair through A sees 100 - 5 Gbps.
    h.add("c", "A", "C", 1);
    h.step_for(3);
    assert_eq!(h.rule("c").allocated_gbps, Some(95));
}

#[test]
fn cancelled_rule_tears_its_circuit_down() {
    let h = Harness::new(&[("A", 100, 2), ("B", 100, 2)]);
    h.add("a", "A", "B", 1);
    h.step_for(3);
    h.rules.push("a", RuleEventKind::Cancelled);
    h.orch.step().unwrap();
    let a = h.rule("a");
    assert_eq!(a.state, RuleState::Cancelled);
    assert_eq!(
        h.circuit(a.circuit_id.as_deref().unwrap()).status,
        CircuitStatus::TornDown
    );
    assert_eq!(h.provider.calls().teardowns, 1);
}

#[test]
fn completion_before_provisioning_cancels() {
    let h = Harness::new(&[("A", 100, 2), ("B", 100, 2)]);
    h.add("a", "A", "B", 1);
    h.orch.ingest().unwrap();
    h.rules.push("a", RuleEventKind::Completed);
    h.orch.step().unwrap();
    assert_eq!(h.rule("a").state, RuleState::Cancelled);
    assert_eq!(h.provider.calls().creates, 0);
}

#[test]
fn crash_after_create_replays_idempotently() {
    let h = Harness::new(&[("A", 100, 2), ("B", 100, 2)]);
    h.add("a", "A", "B", 1);
    h.orch.arm_crash(CrashPoint::AfterCreate);
    assert!(matches!(
        h.orch.step(),
        Err(OrchestratorError::Crashed(CrashPoint::AfterCreate))
    ));
    assert_eq!(h.rule("a").state, RuleState::Decided);
    h.step_for(3);
    assert_eq!(h.rule("a").state, RuleState::Provisioned);
    let calls = h.provider.calls();
    assert_eq!(calls.creates_by_key.get("a"), Some(&1));
    assert_eq!(calls.create_replays, 1);
}

#[test]
fn config_validation() {
    let mut cfg = OrchestratorConfig::default();
    assert!(cfg.validate().is_ok());
    cfg.granularity_gbps = 0;
    assert!(cfg.validate().is_err());
}

#[test]
fn rtt_table_is_symmetric() {
    let mut t = RttTable::default();
    t.set("B", "A", 12.0);
    assert_eq!(t.get("A", "B"), 12.0);
    assert_eq!(t.get("A", "C"), 50.0);
}
