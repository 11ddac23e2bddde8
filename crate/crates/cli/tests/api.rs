//! The served API over a store that a simulation is writing to.

use flowdirector_cli::server::{router, ApiState};
use flowdirector_core::simulator::{ScenarioSite, SimEvent, SimEventKind};
use flowdirector_core::{
    EndpointAllocation, MonitorConfig, Scenario, Simulation, StatusDoc, Store,
};
use reqwest::blocking::get;
use serde_json::Value;
use std::sync::Arc;

mod common;
use common::TestServer;

fn add(t: u64, id: &str, src: &str, dst: &str, priority: u64) -> SimEvent {
    SimEvent {
        t,
        kind: SimEventKind::AddRule {
            rule_id: id.into(),
            src: src.into(),
            dst: dst.into(),
            priority,
            total_bytes: 1_000_000_000_000,
            extra_sources: vec![],
        },
    }
}

fn scenario() -> Scenario {
    let mut sc = Scenario::empty();
    sc.sites = ["A", "B", "C"]
        .iter()
        .map(|n| ScenarioSite {
            name: n.to_string(),
            capacity_gbps: 100,
            endpoints: 2,
        })
        .collect();
    sc.events = vec![
        add(0, "ab", "A", "B", 2),
        add(0, "ac", "A", "C", 1),
        add(5, "late", "B", "C", 1),
        SimEvent {
            t: 8,
            kind: SimEventKind::CancelRule {
                rule_id: "ac".into(),
            },
        },
    ];
    sc
}

fn serve(sim: &Simulation) -> TestServer {
    let path = sim.store().path().expect("file-backed store").to_path_buf();
    TestServer::start(router(ApiState {
        store: Arc::new(Store::open(path).unwrap()),
        monitor: MonitorConfig::default(),
    }))
}

fn status_of(url: &str) -> (u16, Value) {
    let r = get(url).unwrap();
    (r.status().as_u16(), r.json().unwrap())
}

#[test]
fn allocation_codes_follow_rule_lifecycle() {
    let mut sim = Simulation::new(scenario()).unwrap();
    let api = serve(&sim);
    let alloc = |id: &str| status_of(&api.url(&format!("/api/v1/allocation/{id}")));

    assert_eq!(alloc("ab").0, 404, "not ingested yet");
    sim.run_until(3).unwrap();
    let (code, body) = alloc("ab");
    assert_eq!(code, 200, "{body}");
    let a: EndpointAllocation = serde_json::from_value(body).unwrap();
    assert!(a.source_endpoint.starts_with("a-ep"));
    assert!(a.dest_endpoint.starts_with("b-ep"));

    sim.run_until(10).unwrap();
    let (code, body) = alloc("ac");
    assert_eq!(code, 409, "released after cancel: {body}");
    assert_eq!(body["error"], "NotYetAllocated");
    assert_eq!(alloc("missing").0, 404);
}

#[test]
fn status_and_reports() {
    let mut sim = Simulation::new(scenario()).unwrap();
    let api = serve(&sim);
    sim.run_until(6).unwrap();
    let (code, body) = status_of(&api.url("/api/v1/status"));
    assert_eq!(code, 200);
    let doc: StatusDoc = serde_json::from_value(body).unwrap();
    assert_eq!(doc.sites.len(), 3);
    for s in &doc.sites {
        assert!(s.allocated_gbps <= s.capacity_gbps, "{s:?}");
    }
    assert!(doc.rules.iter().any(|r| r.rule_id == "ab"));

    let (code, live) = status_of(&api.url("/api/v1/reports/ab"));
    assert_eq!(code, 200, "{live}");
    assert_eq!(live["rule_id"], "ab");
    assert_eq!(status_of(&api.url("/api/v1/reports/missing")).0, 404);

    let res = sim.run().unwrap();
    assert!(res.passed(), "{}", res.render());
}
