//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Run with `cargo test -p flowdirector-cli --test acceptance`.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::sync::{Arc, Barrier};
use std::time::Instant;

use flowdirector_cli::server::{router, ApiState};
use flowdirector_core::allocator::{allocate_graph, TopologyEdge, TopologyGraph};
use flowdirector_core::model::transition;
use flowdirector_core::orchestrator::CrashPoint;
use flowdirector_core::simulator::{ScenarioSite, SimEvent, SimEventKind};
use flowdirector_core::{
    brute_force, solve, tune_transfers, AllocationProblem, LpError, RuleState, Scenario,
    Simulation, StatusDoc, Store, TransferRule, TuningConfig, Verdict,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

mod common;
use common::{data, TestServer};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

const G: u64 = 5;
const TB: u64 = 1_000_000_000_000;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 10] = [
        ("allocate on the four-site example", c1_allocate_example),
        ("simplex dominates grid search", c2_lp_vs_brute_force),
        ("allocator properties", c3_allocator_properties),
        ("state machine and CAS race", c4_state_machine),
        ("crash after provisioning commit", c5_crash_recovery),
        ("stale circuit reuse and reaping", c6_reuse),
        ("priority change propagates", c7_priority_change),
        ("underperformance detection and reports", c8_monitoring),
        ("transfer tuning", c9_tuning),
        ("allocation API and status totals", c10_api),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2} s): {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1 --------------------------------------------------------------------------

fn c1_allocate_example() -> Outcome {
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_flowdirector"))
        .arg("allocate")
        .arg(data("four-site.toml"))
        .arg("--json")
        .output()
        .map_err(err)?;
    let elapsed = started.elapsed();
    ensure!(out.status.success(), "exit {:?}", out.status.code());
    let doc: Value = serde_json::from_slice(&out.stdout).map_err(err)?;
    let nums = |v: &Value| -> Vec<u64> {
        v.as_array()
            .into_iter()
            .flatten()
            .filter_map(Value::as_u64)
            .collect()
    };
    let c = nums(&doc["priorities"]);
    let x = nums(&doc["x"]);
    let l = doc["lower_bound_gbps"].as_u64();
    let per_rule: Vec<u64> = doc["allocations"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|a| a["bandwidth_gbps"].as_u64())
        .collect();
    ensure!(c == [8, 3, 4, 2], "c = {c:?}");
    ensure!(l == Some(65), "l = {l:?}");
    ensure!(x == [335, 65, 65, 70], "x = {x:?}");
    ensure!(per_rule == [210, 125, 65, 65, 70], "rules = {per_rule:?}");
    ensure!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    Ok(format!(
        "x = {x:?}, rules = {per_rule:?} in {} ms",
        elapsed.as_millis()
    ))
}

// 2 --------------------------------------------------------------------------

fn random_problem(rng: &mut ChaCha8Rng) -> AllocationProblem {
    let n = rng.gen_range(2..=4);
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .collect();
    pairs.shuffle(rng);
    pairs.truncate(rng.gen_range(1..=pairs.len().min(4)));
    let e = pairs.len();
    let mut incidence = vec![vec![0u8; e]; n];
    for (j, &(a, b)) in pairs.iter().enumerate() {
        incidence[a][j] = 1;
        incidence[b][j] = 1;
    }
    let capacities: Vec<u64> = (0..n).map(|_| 50 * rng.gen_range(1..=8)).collect();
    let priorities: Vec<u64> = (0..e).map(|_| rng.gen_range(1..=9)).collect();
    // The largest uniform bound every site can carry, in steps of g.
    let max_l = (0..n)
        .filter_map(|i| {
            let d = incidence[i].iter().filter(|&&v| v == 1).count() as u64;
            (d > 0).then(|| capacities[i] / d)
        })
        .min()
        .unwrap_or(0);
    let lower_bound = G * rng.gen_range(0..=max_l / G);
    AllocationProblem {
        incidence,
        capacities,
        priorities,
        lower_bound,
    }
}

fn c2_lp_vs_brute_force() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    let mut strictly_better = 0;
    while checked < 200 {
        let p = random_problem(&mut rng);
        let grid = brute_force(&p, G).map_err(err)?;
        match solve(&p) {
            Ok(sol) => {
                ensure!(
                    p.is_feasible(&sol.x),
                    "infeasible answer {:?} for {p:?}",
                    sol.x
                );
                ensure!(grid.feasible, "grid found nothing for {p:?}");
                ensure!(
                    sol.objective >= grid.objective,
                    "{p:?}: solve {} < grid {}",
                    sol.objective,
                    grid.objective
                );
                if sol.objective > grid.objective {
                    strictly_better += 1;
                }
                checked += 1;
            }
            Err(LpError::Infeasible { .. }) => ensure!(!grid.feasible, "{p:?}: solve infeasible"),
            Err(e) => return Err(e.to_string()),
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1} s");
    Ok(format!(
        "{checked} instances, {strictly_better} strictly better than the grid"
    ))
}

// 3 --------------------------------------------------------------------------

struct Instance {
    sites: Vec<(String, u64)>,
    rules: Vec<TopologyEdge>,
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng) -> Instance {
        let n = rng.gen_range(2..=5);
        let sites: Vec<(String, u64)> = (0..n)
            .map(|i| (format!("S{i}"), 50 * rng.gen_range(1..=8)))
            .collect();
        let rules = (0..rng.gen_range(1..=8))
            .map(|k| {
                let a = rng.gen_range(0..n);
                let b = (a + rng.gen_range(1..n)) % n;
                TopologyEdge {
                    rule_id: format!("r{k}"),
                    src: sites[a].0.clone(),
                    dst: sites[b].0.clone(),
                    priority: rng.gen_range(1..=9),
                }
            })
            .collect();
        Instance { sites, rules }
    }

    fn graph(&self, scale: u64) -> TopologyGraph {
        let mut rules = self.rules.clone();
        for r in &mut rules {
            r.priority *= scale;
        }
        TopologyGraph::new(self.sites.clone(), rules).unwrap()
    }
}

fn unordered(e: &TopologyEdge) -> (&str, &str) {
    if e.src <= e.dst {
        (&e.src, &e.dst)
    } else {
        (&e.dst, &e.src)
    }
}

fn c3_allocator_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let inst = Instance::random(&mut rng);
        let out = allocate_graph(&inst.graph(1), G).map_err(err)?;
        let bw: HashMap<&str, u64> = out
            .allocations
            .iter()
            .map(|a| (a.rule_id.as_str(), a.bandwidth_gbps))
            .collect();
        // Conservation: members of a merged edge share exactly its bandwidth.
        for (edge, &x) in out.merged.iter().zip(&out.solution.x) {
            let sum: u64 = edge.members.iter().map(|(id, _)| bw[id.as_str()]).sum();
            ensure!(sum == x, "case {case}: members sum {sum} != {x}");
            ensure!(x >= out.lower_bound && x % G == 0, "case {case}: edge {x}");
        }
        // Capacity.
        for (site, cap) in &inst.sites {
            let used: u64 = inst
                .rules
                .iter()
                .filter(|r| &r.src == site || &r.dst == site)
                .map(|r| bw[r.rule_id.as_str()])
                .sum();
            ensure!(used <= *cap, "case {case}: {site} {used} > {cap}");
        }
        // Monotonicity within a site pair.
        for a in &inst.rules {
            for b in &inst.rules {
                if unordered(a) == unordered(b) && a.priority > b.priority {
                    let (x, y) = (bw[a.rule_id.as_str()], bw[b.rule_id.as_str()]);
                    ensure!(
                        x >= y,
                        "case {case}: {} gets {x} < {} gets {y}",
                        a.rule_id,
                        b.rule_id
                    );
                }
            }
        }
        // Scaling every priority by k changes nothing.
        let k = rng.gen_range(2..=7);
        let scaled = allocate_graph(&inst.graph(k), G).map_err(err)?;
        ensure!(
            scaled.allocations == out.allocations,
            "case {case}: scaling by {k}"
        );
        // Determinism.
        let again = allocate_graph(&inst.graph(1), G).map_err(err)?;
        ensure!(again == out, "case {case}: second run differs");
    }
    Ok("1000 cases: conservation, capacity, monotonicity, scaling, determinism".into())
}

// 4 --------------------------------------------------------------------------

fn legal(from: RuleState, to: RuleState) -> bool {
    use RuleState::*;
    let forward = [
        (Initialized, Allocated),
        (Allocated, Decided),
        (Decided, Provisioning),
        (Provisioning, Provisioned),
        (Provisioned, Modifying),
        (Modifying, Provisioned),
        (Provisioned, Finished),
        (Failed, Initialized),
    ];
    let live = [
        Initialized,
        Allocated,
        Decided,
        Provisioning,
        Provisioned,
        Modifying,
    ];
    forward.contains(&(from, to)) || (matches!(to, Failed | Cancelled) && live.contains(&from))
}

fn c4_state_machine() -> Outcome {
    let mut pairs = 0;
    for from in RuleState::ALL {
        for to in RuleState::ALL {
            let mut r = TransferRule::new("r", "A", "B", 1, 1, 0).map_err(err)?;
            r.state = from;
            if from.carries_endpoints() {
                r.src_endpoint = Some("a1".into());
                r.dst_endpoint = Some("b1".into());
            }
            if from.carries_allocation() {
                r.allocated_gbps = Some(G);
            }
            let ok = transition(&r, to, 1).is_ok();
            ensure!(ok == legal(from, to), "{from} -> {to}: accepted = {ok}");
            pairs += 1;
        }
    }

    let dir = tempfile::tempdir().map_err(err)?;
    let db = dir.path().join("race.db");
    let rounds = 20;
    for round in 0..rounds {
        let id = format!("r{round}");
        Store::open(&db)
            .and_then(|s| {
                s.write(|tx| tx.insert_rule(&TransferRule::new(id.clone(), "A", "B", 1, 1, 0)?))
            })
            .map_err(err)?;
        let barrier = Arc::new(Barrier::new(2));
        let handles: Vec<_> = [RuleState::Allocated, RuleState::Cancelled]
            .into_iter()
            .map(|target| {
                let (db, barrier, id) = (db.clone(), barrier.clone(), id.clone());
                std::thread::spawn(move || {
                    let store = Store::open(&db).unwrap();
                    let seen = store.read(|tx| tx.rule(&id)).unwrap().unwrap();
                    let mut next = transition(&seen, target, 1).unwrap();
                    if target == RuleState::Allocated {
                        next.src_endpoint = Some("a1".into());
                        next.dst_endpoint = Some("b1".into());
                    }
                    barrier.wait();
                    store.write(|tx| tx.cas_rule(&next, seen.state)).is_ok()
                })
            })
            .collect();
        let wins = handles
            .into_iter()
            .map(|h| h.join().unwrap_or(false))
            .filter(|&won| won)
            .count();
        ensure!(wins == 1, "round {round}: {wins} winners");
        let end = Store::open(&db)
            .and_then(|s| s.read(|tx| tx.rule(&id)))
            .map_err(err)?
            .ok_or("rule vanished")?;
        ensure!(
            end.state != RuleState::Initialized,
            "round {round}: nobody committed"
        );
    }
    Ok(format!(
        "{pairs} state pairs, {rounds} races with one winner each"
    ))
}

// shared scenario helpers ----------------------------------------------------

fn site(name: &str, capacity_gbps: u64, endpoints: usize) -> ScenarioSite {
    ScenarioSite {
        name: name.into(),
        capacity_gbps,
        endpoints,
    }
}

fn add(t: u64, id: &str, src: &str, dst: &str, priority: u64, total_bytes: u64) -> SimEvent {
    SimEvent {
        t,
        kind: SimEventKind::AddRule {
            rule_id: id.into(),
            src: src.into(),
            dst: dst.into(),
            priority,
            total_bytes,
            extra_sources: vec![],
        },
    }
}

fn four_site_rules() -> Vec<(&'static str, &'static str, &'static str, u64)> {
    vec![
        ("r1", "UCSD", "Caltech", 5),
        ("r2", "UCSD", "Caltech", 3),
        ("r3", "UCSD", "FNAL", 3),
        ("r4", "Caltech", "FNAL", 4),
        ("r5", "FNAL", "Nebraska", 2),
    ]
}

fn four_site_capacities() -> Vec<(&'static str, u64)> {
    vec![
        ("UCSD", 400),
        ("Caltech", 400),
        ("FNAL", 200),
        ("Nebraska", 100),
    ]
}

fn four_site_scenario(total_bytes: u64) -> Scenario {
    let mut sc = Scenario::empty();
    sc.sites = four_site_capacities()
        .into_iter()
        .map(|(n, c)| site(n, c, 4))
        .collect();
    sc.events = four_site_rules()
        .into_iter()
        .map(|(id, s, d, p)| add(0, id, s, d, p, total_bytes))
        .collect();
    sc
}

fn drain(sim: &mut Simulation) -> Result<(), String> {
    for _ in 0..100_000 {
        if sim.quiescent().map_err(err)? {
            return Ok(());
        }
        sim.tick().map_err(err)?;
    }
    Err("simulation did not settle".into())
}

fn rule_state(sim: &Simulation, id: &str) -> Result<TransferRule, String> {
    sim.store()
        .read(|tx| tx.rule(id))
        .map_err(err)?
        .ok_or_else(|| format!("no rule {id}"))
}

// 5 --------------------------------------------------------------------------

fn c5_crash_recovery() -> Outcome {
    let mut sc = Scenario::empty();
    sc.sites = vec![site("A", 100, 4), site("B", 100, 4)];
    sc.events = vec![
        SimEvent {
            t: 0,
            kind: SimEventKind::Crash {
                point: CrashPoint::AfterProvisioningCommit,
            },
        },
        add(0, "r1", "A", "B", 1, TB / 10),
    ];
    let mut sim = Simulation::new(sc).map_err(err)?;
    let mut reached = None;
    for _ in 0..30 {
        sim.tick().map_err(err)?;
        if rule_state(&sim, "r1")?.state == RuleState::Provisioned {
            reached = Some(sim.now_ms());
            break;
        }
    }
    let at = reached.ok_or("r1 never reached PROVISIONED")?;
    let creates = sim
        .provider()
        .calls()
        .creates_by_key
        .get("r1")
        .copied()
        .unwrap_or(0);
    ensure!(creates == 1, "{creates} creates for r1");
    let res = sim.run().map_err(err)?;
    ensure!(res.restarts == 1, "{} restarts", res.restarts);
    ensure!(res.passed(), "{}", res.render());
    let creates = res
        .provider_calls
        .creates_by_key
        .get("r1")
        .copied()
        .unwrap_or(0);
    ensure!(creates == 1, "{creates} creates for r1 by the end");
    Ok(format!(
        "1 restart, 1 create, PROVISIONED at {} s",
        at / 1000
    ))
}

// 6 --------------------------------------------------------------------------

struct ReuseRun {
    creates: u32,
    modifies: u32,
    teardowns_before_b: usize,
    reaper_teardowns_before_b: usize,
}

fn reuse(gap_s: u64) -> Result<ReuseRun, String> {
    let mut sc = Scenario::empty();
    sc.sites = vec![site("A", 100, 4), site("B", 100, 4)];
    sc.events = vec![add(0, "a", "A", "B", 1, TB / 10)];
    let mut sim = Simulation::new(sc).map_err(err)?;
    while sim.completed_at("a").is_none() {
        ensure!(sim.now_ms() < 3_600_000, "a never completed");
        sim.tick().map_err(err)?;
    }
    // The finish pass parks a's circuit on the next tick.
    sim.tick().map_err(err)?;
    let a_done = sim.now_ms() / 1000;
    sim.push_event(add(a_done + gap_s, "b", "A", "B", 1, TB / 10));
    drain(&mut sim)?;
    let b_done = sim.completed_at("b").ok_or("b never completed")?;
    let teardowns_before_b = sim
        .provider()
        .call_log()
        .iter()
        .filter(|(t, m)| *t <= b_done && m.starts_with("teardown"))
        .count();
    let calls = sim.provider().calls();
    let res = sim.finish().map_err(err)?;
    ensure!(res.passed(), "{}", res.render());
    let reaper_teardowns_before_b = res
        .log
        .iter()
        .filter(|l| l.t <= b_done && l.daemon == "reaper" && l.message.contains("TORN_DOWN"))
        .count();
    Ok(ReuseRun {
        creates: calls.creates,
        modifies: calls.modifies,
        teardowns_before_b,
        reaper_teardowns_before_b,
    })
}

fn c6_reuse() -> Outcome {
    let near = reuse(100)?;
    ensure!(near.creates == 1, "gap 100 s: {} creates", near.creates);
    ensure!(near.modifies >= 1, "gap 100 s: no modify");
    ensure!(
        near.teardowns_before_b == 0,
        "gap 100 s: {} teardowns",
        near.teardowns_before_b
    );
    let far = reuse(700)?;
    ensure!(far.creates == 2, "gap 700 s: {} creates", far.creates);
    ensure!(
        far.teardowns_before_b == 1 && far.reaper_teardowns_before_b == 1,
        "gap 700 s: {} teardowns, {} by the reaper",
        far.teardowns_before_b,
        far.reaper_teardowns_before_b
    );
    Ok(format!(
        "gap 100 s: 1 create, {} modifies, 0 teardowns; gap 700 s: 2 creates, 1 reaped",
        near.modifies
    ))
}

// 7 --------------------------------------------------------------------------

fn c7_priority_change() -> Outcome {
    let bump_at = 20;
    let mut sc = four_site_scenario(100 * TB);
    sc.events.push(SimEvent {
        t: bump_at,
        kind: SimEventKind::SetPriority {
            rule_id: "r2".into(),
            priority: 10,
        },
    });
    let mut sim = Simulation::new(sc).map_err(err)?;
    sim.run_until(bump_at).map_err(err)?;
    let before = sim.provider().calls().modifies;

    let graph = TopologyGraph::new(
        four_site_capacities()
            .into_iter()
            .map(|(n, c)| (n.to_string(), c))
            .collect(),
        four_site_rules()
            .into_iter()
            .map(|(id, s, d, p)| TopologyEdge {
                rule_id: id.into(),
                src: s.into(),
                dst: d.into(),
                priority: if id == "r2" { 10 } else { p },
            })
            .collect(),
    )
    .map_err(err)?;
    let fresh: Vec<(String, Option<u64>)> = allocate_graph(&graph, G)
        .map_err(err)?
        .allocations
        .into_iter()
        .map(|a| (a.rule_id, Some(a.bandwidth_gbps)))
        .collect();

    for tick in 1..=2 {
        sim.tick().map_err(err)?;
        let stored: Vec<(String, Option<u64>)> = sim
            .store()
            .read(|tx| tx.rules())
            .map_err(err)?
            .into_iter()
            .map(|r| (r.rule_id, r.allocated_gbps))
            .collect();
        let modified = sim.provider().calls().modifies > before;
        if modified && stored == fresh {
            return Ok(format!(
                "modified within {tick} tick(s), allocations {fresh:?}"
            ));
        }
    }
    Err("no modify with the fresh allocation within 2 ticks".into())
}

// 8 --------------------------------------------------------------------------

fn verdict(sim: &Simulation, id: &str) -> Result<Option<Verdict>, String> {
    sim.store().read(|tx| tx.verdict(id)).map_err(err)
}

fn c8_monitoring() -> Outcome {
    let scale_at = 30;
    let mut sc = Scenario::empty();
    sc.sites = vec![site("A", 100, 4), site("B", 100, 4), site("C", 100, 4)];
    sc.events = vec![
        add(0, "slow", "A", "B", 1, TB),
        add(0, "fine", "A", "C", 1, TB),
        add(0, "other", "B", "C", 1, TB / 2),
        SimEvent {
            t: scale_at,
            kind: SimEventKind::MetricsScale {
                rule_id: "slow".into(),
                factor: 0.5,
            },
        },
    ];
    let mut sim = Simulation::new(sc).map_err(err)?;
    let unscaled = ["fine", "other"];
    let check_unscaled = |sim: &Simulation| -> Result<(), String> {
        for id in unscaled {
            let v = verdict(sim, id)?;
            ensure!(
                matches!(v, None | Some(Verdict::Healthy)),
                "{id} is {v:?} at {} ms",
                sim.now_ms()
            );
        }
        Ok(())
    };
    while sim.now_ms() < scale_at * 1000 {
        sim.tick().map_err(err)?;
        check_unscaled(&sim)?;
    }
    ensure!(
        verdict(&sim, "slow")? == Some(Verdict::Healthy),
        "slow not healthy before scaling"
    );
    let mut flagged_after = None;
    for _ in 0..10 {
        sim.tick().map_err(err)?;
        check_unscaled(&sim)?;
        if verdict(&sim, "slow")? == Some(Verdict::Underperforming) {
            let samples = sim.store().read(|tx| tx.samples("slow")).map_err(err)?;
            flagged_after = Some(samples.iter().filter(|s| s.t > scale_at * 1000).count());
            break;
        }
    }
    let n = flagged_after.ok_or("slow never flagged")?;
    ensure!(n <= 3, "flagged after {n} scaled samples");
    while !sim.quiescent().map_err(err)? {
        sim.tick().map_err(err)?;
        if sim.completed_at("fine").is_none() {
            check_unscaled(&sim)?;
        }
    }

    let path = sim.store().path().ok_or("store has no path")?.to_path_buf();
    let api = TestServer::start(router(ApiState {
        store: Arc::new(Store::open(path).map_err(err)?),
        monitor: sim.config().monitor.clone(),
    }));
    let finished: Vec<String> = sim
        .store()
        .read(|tx| tx.rules_in(&[RuleState::Finished]))
        .map_err(err)?
        .into_iter()
        .map(|r| r.rule_id)
        .collect();
    ensure!(finished.len() == 3, "{} finished rules", finished.len());
    for id in &finished {
        let resp =
            reqwest::blocking::get(api.url(&format!("/api/v1/reports/{id}"))).map_err(err)?;
        ensure!(
            resp.status().as_u16() == 200,
            "report {id}: HTTP {}",
            resp.status()
        );
        let body: Value = resp.json().map_err(err)?;
        ensure!(body["rule_id"] == id.as_str(), "report {id}: {body}");
        ensure!(
            body["samples"].as_u64().unwrap_or(0) > 0,
            "report {id} has no samples"
        );
    }
    Ok(format!(
        "flagged after {n} samples; {} finished rules reported",
        finished.len()
    ))
}

// 9 --------------------------------------------------------------------------

fn c9_tuning() -> Outcome {
    let cfg = TuningConfig::default();
    let cases = [
        (200, 50.0, 100),
        (0, 50.0, 2),
        (0, 1000.0, 2),
        (0, 1.0, 2),
        (100, 1000.0, 200),
    ];
    for (bw, rtt, want) in cases {
        let got = tune_transfers(bw, rtt, &cfg);
        ensure!(got == want, "tune({bw}, {rtt} ms) = {got}, expected {want}");
    }
    Ok("tune(200, 50 ms) = 100, tune(0, *) = 2, tune(100, 1000 ms) = 200".into())
}

// 10 -------------------------------------------------------------------------

fn c10_api() -> Outcome {
    let mut sc = four_site_scenario(TB);
    // Lincoln has a single endpoint, so w2 waits (409) while w1 holds it.
    sc.sites.push(site("Lincoln", 100, 1));
    sc.events.push(add(0, "w1", "Lincoln", "FNAL", 1, TB / 4));
    sc.events
        .push(add(0, "w2", "Lincoln", "Caltech", 1, TB / 4));
    sc.events.push(SimEvent {
        t: 15,
        kind: SimEventKind::CancelRule {
            rule_id: "r3".into(),
        },
    });
    let mut sim = Simulation::new(sc).map_err(err)?;
    let path = sim.store().path().ok_or("store has no path")?.to_path_buf();
    let api = TestServer::start(router(ApiState {
        store: Arc::new(Store::open(path).map_err(err)?),
        monitor: sim.config().monitor.clone(),
    }));
    let get = |p: &str| -> Result<(u16, Value), String> {
        let r = reqwest::blocking::get(api.url(p)).map_err(err)?;
        let code = r.status().as_u16();
        Ok((code, r.json().map_err(err)?))
    };

    let mut codes: HashMap<u16, usize> = HashMap::new();
    let mut polls = 0;
    // Poll until every rule is terminal; the idle reap window adds nothing.
    for _ in 0..100_000 {
        let rules = sim.store().read(|tx| tx.rules()).map_err(err)?;
        if sim.now_ms() > 15_000 && rules.iter().all(|r| r.state.is_terminal()) {
            break;
        }
        sim.tick().map_err(err)?;
        let (code, body) = get("/api/v1/status")?;
        ensure!(code == 200, "status HTTP {code}");
        let doc: StatusDoc = serde_json::from_value(body).map_err(err)?;
        for s in &doc.sites {
            ensure!(
                s.allocated_gbps <= s.capacity_gbps,
                "{} at {} of {} Gbps at {} ms",
                s.name,
                s.allocated_gbps,
                s.capacity_gbps,
                sim.now_ms()
            );
        }
        polls += 1;

        for id in ["r1", "r3", "w1", "w2", "nonexistent"] {
            let (code, body) = get(&format!("/api/v1/allocation/{id}"))?;
            let rule = sim.store().read(|tx| tx.rule(id)).map_err(err)?;
            let expected = match &rule {
                None => 404,
                Some(r) if r.src_endpoint.is_some() && r.dst_endpoint.is_some() => 200,
                Some(_) => 409,
            };
            ensure!(
                code == expected,
                "{id}: HTTP {code}, expected {expected}: {body}"
            );
            if code == 200 {
                let r = rule.as_ref().unwrap();
                ensure!(
                    body["source_endpoint"] == r.src_endpoint.as_deref().unwrap()
                        && body["dest_endpoint"] == r.dst_endpoint.as_deref().unwrap(),
                    "{id}: {body}"
                );
            }
            *codes.entry(code).or_default() += 1;
        }
    }
    for code in [200, 404, 409] {
        ensure!(
            codes.contains_key(&code),
            "never observed HTTP {code}: {codes:?}"
        );
    }
    drain(&mut sim)?;
    let res = sim.finish().map_err(err)?;
    ensure!(res.passed(), "{}", res.render());
    Ok(format!(
        "{polls} status polls within capacity; allocation codes 200 x{}, 404 x{}, 409 x{}",
        codes[&200], codes[&404], codes[&409]
    ))
}
