//! Priority-weighted bandwidth allocation over the transfer topology.
//!
//! Rules form a multigraph over sites. Parallel rules between the same pair
//! of sites are merged into one edge whose priority is the sum of its
//! members, the merged problem is solved with the largest granularity-aligned
//! lower bound that keeps every edge feasible, and each merged edge's
//! bandwidth is then split among its member rules by largest remainder.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, AllocationProblem, AllocationSolution, LpError};
use crate::model::{Gbps, Site, TransferRule};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyEdge {
    pub rule_id: String,
    pub src: String,
    pub dst: String,
    pub priority: u64,
}

/// Sites as nodes, rules as (possibly parallel) edges. Node order fixes the
/// row order of the incidence matrix and the column order of merged edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyGraph {
    nodes: Vec<(String, Gbps)>,
    edges: Vec<TopologyEdge>,
}

impl TopologyGraph {
    pub fn new(nodes: Vec<(String, Gbps)>, edges: Vec<TopologyEdge>) -> Result<Self, AllocError> {
        let mut index = HashMap::new();
        for (i, (name, _)) in nodes.iter().enumerate() {
            if index.insert(name.as_str(), i).is_some() {
                return Err(AllocError::DuplicateSite(name.clone()));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for edge in &edges {
            for site in [&edge.src, &edge.dst] {
                if !index.contains_key(site.as_str()) {
                    return Err(AllocError::UnknownSite {
                        rule_id: edge.rule_id.clone(),
                        site: site.clone(),
                    });
                }
            }
            if edge.src == edge.dst {
                return Err(AllocError::SelfLoop(edge.rule_id.clone()));
            }
            if edge.priority == 0 {
                return Err(AllocError::ZeroPriority(edge.rule_id.clone()));
            }
            if !ids.insert(edge.rule_id.as_str()) {
                return Err(AllocError::DuplicateRule(edge.rule_id.clone()));
            }
        }
        Ok(TopologyGraph { nodes, edges })
    }

    pub fn from_rules(rules: &[TransferRule], sites: &[Site]) -> Result<Self, AllocError> {
        let nodes = sites
            .iter()
            .map(|s| (s.name.clone(), s.port_capacity))
            .collect();
        let edges = rules
            .iter()
            .map(|r| TopologyEdge {
                rule_id: r.rule_id.clone(),
                src: r.src.clone(),
                dst: r.dst.clone(),
                priority: r.priority,
            })
            .collect();
        TopologyGraph::new(nodes, edges)
    }

    pub fn nodes(&self) -> &[(String, Gbps)] {
        &self.nodes
    }

    pub fn edges(&self) -> &[TopologyEdge] {
        &self.edges
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedEdge {
    /// Unordered pair, listed in node order.
    pub site_pair: (String, String),
    pub merged_priority: u64,
    pub members: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleAllocation {
    pub rule_id: String,
    pub bandwidth_gbps: Gbps,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("granularity must be positive")]
    ZeroGranularity,
    #[error("duplicate site {0}")]
    DuplicateSite(String),
    #[error("duplicate rule {0}")]
    DuplicateRule(String),
    #[error("rule {rule_id} references unknown site {site}")]
    UnknownSite { rule_id: String, site: String },
    #[error("rule {0} has identical source and destination")]
    SelfLoop(String),
    #[error("rule {0} has priority 0")]
    ZeroPriority(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Merged edges plus the skeleton problem (`lower_bound` = 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Merged {
    pub edges: Vec<MergedEdge>,
    pub problem: AllocationProblem,
}

/// Collapses parallel rules into one edge per unordered site pair. Columns
/// are ordered by the pair's node indices, rows follow node order.
pub fn merge(graph: &TopologyGraph) -> Merged {
    let index: HashMap<&str, usize> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, (name, _))| (name.as_str(), i))
        .collect();

    let mut by_pair: BTreeMap<(usize, usize), Vec<(String, u64)>> = BTreeMap::new();
    for edge in &graph.edges {
        let (a, b) = (index[edge.src.as_str()], index[edge.dst.as_str()]);
        let key = (a.min(b), a.max(b));
        by_pair
            .entry(key)
            .or_default()
            .push((edge.rule_id.clone(), edge.priority));
    }

    let n = graph.nodes.len();
    let mut incidence = vec![vec![0u8; by_pair.len()]; n];
    let mut edges = Vec::with_capacity(by_pair.len());
    for (col, ((a, b), mut members)) in by_pair.into_iter().enumerate() {
        incidence[a][col] = 1;
        incidence[b][col] = 1;
        members.sort();
        edges.push(MergedEdge {
            site_pair: (graph.nodes[a].0.clone(), graph.nodes[b].0.clone()),
            merged_priority: members.iter().map(|(_, p)| p).sum(),
            members,
        });
    }
    let problem = AllocationProblem {
        incidence,
        capacities: graph.nodes.iter().map(|(_, c)| *c).collect(),
        priorities: edges.iter().map(|e| e.merged_priority).collect(),
        lower_bound: 0,
    };
    Merged { edges, problem }
}

/// Largest granularity-aligned `l` for which every edge at `l` fits:
/// `g · floor(min_n (b_n / deg_n) / g)` over sites with at least one edge.
pub fn max_lower_bound(incidence: &[Vec<u8>], capacities: &[Gbps], granularity: Gbps) -> Gbps {
    if granularity == 0 {
        return 0;
    }
    incidence
        .iter()
        .zip(capacities)
        .filter_map(|(row, &cap)| {
            let degree = row.iter().filter(|&&v| v == 1).count() as u64;
            (degree > 0).then(|| cap / (degree * granularity))
        })
        .min()
        .map_or(0, |units| units * granularity)
}

/// Full record of one allocation run, kept for reporting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationOutcome {
    pub merged: Vec<MergedEdge>,
    pub lower_bound: Gbps,
    /// Merged-edge bandwidths, one per entry of `merged`.
    pub solution: AllocationSolution,
    /// Per-rule bandwidths in the order the rules were supplied.
    pub allocations: Vec<RuleAllocation>,
}

impl AllocationOutcome {
    pub fn priorities(&self) -> Vec<u64> {
        self.merged.iter().map(|e| e.merged_priority).collect()
    }

    pub fn bandwidth_of(&self, rule_id: &str) -> Option<Gbps> {
        self.allocations
            .iter()
            .find(|a| a.rule_id == rule_id)
            .map(|a| a.bandwidth_gbps)
    }
}

/// Runs merge → lower bound → solve (relaxing `l` by `g` while infeasible)
/// → apportion.
///
/// The problem is solved in units of `g` so every merged-edge bandwidth, and
/// therefore every rule allocation, is a multiple of `g`.
pub fn allocate_graph(
    graph: &TopologyGraph,
    granularity: Gbps,
) -> Result<AllocationOutcome, AllocError> {
    if granularity == 0 {
        return Err(AllocError::ZeroGranularity);
    }
    let merged = merge(graph);
    let g = granularity;
    let mut units = merged.problem.clone();
    units.capacities = units.capacities.iter().map(|c| c / g).collect();

    let mut lower_bound = max_lower_bound(&merged.problem.incidence, &merged.problem.capacities, g);
    let solution_units = loop {
        match lp::solve(&units.with_lower_bound(lower_bound / g)) {
            Ok(sol) => break sol,
            Err(LpError::Infeasible { .. }) if lower_bound >= g => lower_bound -= g,
            Err(err) => return Err(err.into()),
        }
    };
    let x: Vec<Gbps> = solution_units.x.iter().map(|v| v * g).collect();
    let solution = AllocationSolution {
        objective: merged.problem.objective(&x),
        x,
        feasible: true,
    };

    let mut per_rule: HashMap<String, Gbps> = HashMap::new();
    for (edge, &total) in merged.edges.iter().zip(&solution.x) {
        for a in apportion(total, &edge.members, g) {
            per_rule.insert(a.rule_id, a.bandwidth_gbps);
        }
    }
    let allocations = graph
        .edges
        .iter()
        .map(|e| RuleAllocation {
            rule_id: e.rule_id.clone(),
            bandwidth_gbps: per_rule[&e.rule_id],
        })
        .collect();

    Ok(AllocationOutcome {
        merged: merged.edges,
        lower_bound,
        solution,
        allocations,
    })
}

/// Allocates bandwidth to `rules` over `sites`. An empty rule set yields an
/// empty allocation.
pub fn allocate(
    rules: &[TransferRule],
    sites: &[Site],
    granularity: Gbps,
) -> Result<Vec<RuleAllocation>, AllocError> {
    if rules.is_empty() {
        return Ok(Vec::new());
    }
    let graph = TopologyGraph::from_rules(rules, sites)?;
    Ok(allocate_graph(&graph, granularity)?.allocations)
}

/// Splits `total` among `members` in proportion to their priorities using
/// largest-remainder apportionment over units of `granularity`.
///
/// Leftover units go to the largest fractional remainders; ties prefer the
/// higher priority, then the lexicographically smaller rule id. The result
/// follows the order of `members` and sums to `total` whenever `total` is a
/// multiple of `granularity`.
pub fn apportion(total: Gbps, members: &[(String, u64)], granularity: Gbps) -> Vec<RuleAllocation> {
    if members.is_empty() || granularity == 0 {
        return Vec::new();
    }
    let units = (total / granularity) as u128;
    let weight: u128 = members.iter().map(|(_, p)| *p as u128).sum();
    if weight == 0 {
        return members
            .iter()
            .map(|(id, _)| RuleAllocation {
                rule_id: id.clone(),
                bandwidth_gbps: 0,
            })
            .collect();
    }

    let mut seats: Vec<u128> = Vec::with_capacity(members.len());
    let mut remainders: Vec<u128> = Vec::with_capacity(members.len());
    for (_, p) in members {
        let share = units * *p as u128;
        seats.push(share / weight);
        remainders.push(share % weight);
    }
    let leftover = units - seats.iter().sum::<u128>();

    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by(|&a, &b| {
        remainders[b]
            .cmp(&remainders[a])
            .then(members[b].1.cmp(&members[a].1))
            .then(members[a].0.cmp(&members[b].0))
    });
    for &i in order.iter().take(leftover as usize) {
        seats[i] += 1;
    }

    members
        .iter()
        .zip(seats)
        .map(|((id, _), s)| RuleAllocation {
            rule_id: id.clone(),
            bandwidth_gbps: s as u64 * granularity,
        })
        .collect()
}
