//! Inputs shared by the benchmarks.

use flowdirector_core::allocator::{TopologyEdge, TopologyGraph};
use flowdirector_core::simulator::{ScenarioSite, SimEvent, SimEventKind};
use flowdirector_core::Scenario;

/// A ring of `n` sites with `rules_per_pair` rules between each neighbour
/// and one chord per site, deterministic in `n`.
pub fn ring(n: usize, rules_per_pair: usize) -> TopologyGraph {
    let sites: Vec<(String, u64)> = (0..n)
        .map(|i| (format!("S{i:02}"), 100 + 50 * (i as u64 % 7)))
        .collect();
    let mut rules = Vec::new();
    for i in 0..n {
        let links = [(i + 1) % n, (i + n / 2) % n];
        for (k, &j) in links.iter().enumerate() {
            if j == i {
                continue;
            }
            for r in 0..rules_per_pair {
                rules.push(TopologyEdge {
                    rule_id: format!("r{i}-{k}-{r}"),
                    src: sites[i].0.clone(),
                    dst: sites[j].0.clone(),
                    priority: 1 + ((i * 7 + r * 3 + k) % 9) as u64,
                });
            }
        }
    }
    TopologyGraph::new(sites, rules).expect("ring is well formed")
}

/// The four-site example with every rule moving `total_bytes`.
pub fn four_site_scenario(total_bytes: u64) -> Scenario {
    let mut sc = Scenario::empty();
    sc.sites = [
        ("UCSD", 400),
        ("Caltech", 400),
        ("FNAL", 200),
        ("Nebraska", 100),
    ]
    .into_iter()
    .map(|(name, capacity_gbps)| ScenarioSite {
        name: name.into(),
        capacity_gbps,
        endpoints: 4,
    })
    .collect();
    let rules = [
        ("r1", "UCSD", "Caltech", 5),
        ("r2", "UCSD", "Caltech", 3),
        ("r3", "UCSD", "FNAL", 3),
        ("r4", "Caltech", "FNAL", 4),
        ("r5", "FNAL", "Nebraska", 2),
    ];
    sc.events = rules
        .into_iter()
        .map(|(id, src, dst, priority)| SimEvent {
            t: 0,
            kind: SimEventKind::AddRule {
                rule_id: id.into(),
                src: src.into(),
                dst: dst.into(),
                priority,
                total_bytes,
                extra_sources: vec![],
            },
        })
        .collect();
    sc
}
