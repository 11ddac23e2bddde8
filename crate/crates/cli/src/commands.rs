//! The offline subcommands. Each returns its printable output.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use flowdirector_core::allocator::allocate_graph;
use flowdirector_core::service::{render_status, StatusDoc};
use flowdirector_core::{Gbps, Scenario, SimResult, Simulation, TopologyFile};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergedRow {
    pub sites: (String, String),
    pub priority: u64,
    pub members: Vec<String>,
    pub bandwidth_gbps: Gbps,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleRow {
    pub rule_id: String,
    pub src: String,
    pub dst: String,
    pub priority: u64,
    pub bandwidth_gbps: Gbps,
}

/// Machine-readable result of `allocate`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AllocationReport {
    pub granularity_gbps: Gbps,
    pub priorities: Vec<u64>,
    pub lower_bound_gbps: Gbps,
    pub x: Vec<Gbps>,
    pub objective: u64,
    pub merged: Vec<MergedRow>,
    pub allocations: Vec<RuleRow>,
}

pub fn allocation_report(
    topo: &TopologyFile,
    granularity: Option<Gbps>,
) -> anyhow::Result<AllocationReport> {
    let g = granularity.or(topo.granularity_gbps).unwrap_or(5);
    let out = allocate_graph(&topo.graph()?, g)?;
    Ok(AllocationReport {
        granularity_gbps: g,
        priorities: out.priorities(),
        lower_bound_gbps: out.lower_bound,
        x: out.solution.x.clone(),
        objective: out.solution.objective,
        merged: out
            .merged
            .iter()
            .zip(&out.solution.x)
            .map(|(e, &x)| MergedRow {
                sites: e.site_pair.clone(),
                priority: e.merged_priority,
                members: e.members.iter().map(|(id, _)| id.clone()).collect(),
                bandwidth_gbps: x,
            })
            .collect(),
        allocations: topo
            .rules
            .iter()
            .zip(&out.allocations)
            .map(|(r, a)| RuleRow {
                rule_id: r.id.clone(),
                src: r.src.clone(),
                dst: r.dst.clone(),
                priority: r.priority,
                bandwidth_gbps: a.bandwidth_gbps,
            })
            .collect(),
    })
}

pub fn render_allocation(r: &AllocationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "granularity {} Gbps, lower bound {} Gbps",
        r.granularity_gbps, r.lower_bound_gbps
    );
    let _ = writeln!(out, "c = {:?}", r.priorities);
    let _ = writeln!(out, "x = {:?}  (objective {})", r.x, r.objective);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<12} {:<12} {:<12} {:>8} {:>6}",
        "RULE", "SRC", "DST", "PRIORITY", "GBPS"
    );
    for a in &r.allocations {
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:<12} {:>8} {:>6}",
            a.rule_id, a.src, a.dst, a.priority, a.bandwidth_gbps
        );
    }
    out
}

/// `allocate`: the table followed by the JSON document, or the JSON alone.
pub fn allocate(path: &Path, granularity: Option<Gbps>, json_only: bool) -> anyhow::Result<String> {
    let topo = TopologyFile::load(path)?;
    let report = allocation_report(&topo, granularity)?;
    let json = serde_json::to_string_pretty(&report)?;
    Ok(if json_only {
        json + "\n"
    } else {
        format!("{}\n{json}\n", render_allocation(&report))
    })
}

pub fn run_scenario(path: &Path, seed: Option<u64>) -> anyhow::Result<SimResult> {
    let mut scenario = Scenario::load(path)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    Ok(Simulation::new(scenario)?.run()?)
}

/// `status`: fetches `/api/v1/status` and renders it.
pub fn status(url: &str) -> anyhow::Result<String> {
    let url = format!("{}/api/v1/status", url.trim_end_matches('/'));
    let doc: StatusDoc = reqwest::blocking::get(&url)
        .and_then(|r| r.error_for_status())
        .with_context(|| format!("GET {url}"))?
        .json()
        .with_context(|| format!("decoding {url}"))?;
    Ok(render_status(&doc))
}
