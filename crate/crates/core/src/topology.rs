//! Offline topology documents for the `allocate` command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::allocator::{AllocError, TopologyEdge, TopologyGraph};
use crate::config::{load_document, ConfigError};
use crate::model::Gbps;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySite {
    pub name: String,
    pub capacity_gbps: Gbps,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyRule {
    pub id: String,
    pub src: String,
    pub dst: String,
    pub priority: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    /// Overrides the default granularity when the caller does not.
    #[serde(default)]
    pub granularity_gbps: Option<Gbps>,
    pub sites: Vec<TopologySite>,
    #[serde(default)]
    pub rules: Vec<TopologyRule>,
}

impl TopologyFile {
    pub fn load(path: &Path) -> Result<TopologyFile, ConfigError> {
        load_document(path)
    }

    pub fn graph(&self) -> Result<TopologyGraph, AllocError> {
        TopologyGraph::new(
            self.sites
                .iter()
                .map(|s| (s.name.clone(), s.capacity_gbps))
                .collect(),
            self.rules
                .iter()
                .map(|r| TopologyEdge {
                    rule_id: r.id.clone(),
                    src: r.src.clone(),
                    dst: r.dst.clone(),
                    priority: r.priority,
                })
                .collect(),
        )
    }
}
