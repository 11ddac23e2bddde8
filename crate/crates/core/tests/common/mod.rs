#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use flowdirector_core::adapters::mock::{
    MockCircuitProvider, MockMetricsSource, MockRuleSource, MockTransferTool,
};
use flowdirector_core::{
    Adapters, Clock, Orchestrator, OrchestratorConfig, RuleEventKind, RuleMetadata, Site, Store,
    VirtualClock,
};
use indexmap::IndexMap;

/// The outside world: mocks on a shared virtual clock. Survives restarts of
/// the orchestrator.
pub struct World {
    pub clock: VirtualClock,
    pub rules: Arc<MockRuleSource>,
    pub provider: Arc<MockCircuitProvider>,
    pub tool: Arc<MockTransferTool>,
    pub metrics: Arc<MockMetricsSource>,
    pub sites: Vec<Site>,
}

impl World {
    pub fn new(sites: &[(&str, u64)]) -> World {
        let clock = VirtualClock::new();
        let dyn_clock: Arc<dyn Clock> = Arc::new(clock.clone());
        let inventory: IndexMap<String, Vec<String>> = sites
            .iter()
            .map(|(n, _)| {
                let l = n.to_lowercase();
                (n.to_string(), vec![format!("{l}1"), format!("{l}2")])
            })
            .collect();
        World {
            rules: Arc::new(MockRuleSource::new(dyn_clock.clone())),
            provider: Arc::new(
                MockCircuitProvider::new(dyn_clock.clone(), inventory).with_provision_delay(1_000),
            ),
            tool: Arc::new(MockTransferTool::new()),
            metrics: Arc::new(MockMetricsSource::new(dyn_clock)),
            sites: sites.iter().map(|(n, c)| Site::new(*n, *c)).collect(),
            clock,
        }
    }

    pub fn adapters(&self) -> Adapters {
        Adapters {
            rules: self.rules.clone(),
            circuits: self.provider.clone(),
            transfers: self.tool.clone(),
            metrics: self.metrics.clone(),
        }
    }

    /// A fresh orchestrator process over the store file at `path`.
    pub fn start(&self, path: &Path) -> Orchestrator {
        let store = Arc::new(Store::open(path).unwrap());
        let orch = Orchestrator::new(
            store,
            self.adapters(),
            Arc::new(self.clock.clone()),
            OrchestratorConfig::default(),
        );
        orch.bootstrap(&self.sites).unwrap();
        orch
    }

    pub fn add(&self, id: &str, src: &str, dst: &str, priority: u64) {
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
}

/// Copies the database and its write-ahead log as they are on disk right
/// now: the image a killed process leaves behind.
pub fn disk_image(db: &Path, into: &Path) -> std::path::PathBuf {
    let target = into.join("image.db");
    std::fs::copy(db, &target).unwrap();
    let wal = db.with_extension("db-wal");
    if wal.exists() {
        std::fs::copy(&wal, target.with_extension("db-wal")).unwrap();
    }
    target
}
