//! Circuit-aware orchestration of point-to-point data transfer rules.
//!
//! Start at [`allocator`] for the bandwidth decision and at [`orchestrator`]
//! for the rule lifecycle. The [`simulator`] runs both against in-process
//! mocks on virtual time.

pub mod adapters;
pub mod allocator;
pub mod clock;
pub mod config;
pub mod lp;
pub mod model;
pub mod monitor;
pub mod orchestrator;
pub mod service;
pub mod simulator;
pub mod store;
pub mod topology;

pub use adapters::{
    AdapterError, Adapters, CircuitProvider, CircuitRequest, JobStats, MetricsSource, RuleEvent,
    RuleEventKind, RuleMetadata, RuleSource, TransferTool,
};
pub use allocator::{
    allocate, allocate_graph, apportion, max_lower_bound, merge, AllocError, AllocationOutcome,
    MergedEdge, RuleAllocation, TopologyEdge, TopologyGraph,
};
pub use clock::{Clock, SystemClock, VirtualClock};
pub use config::{Config, ConfigError};
pub use lp::{brute_force, solve, AllocationProblem, AllocationSolution, LpError};
pub use model::{
    transition, Circuit, CircuitStatus, Endpoint, Gbps, Millis, ModelError, RuleState, Site,
    TransferRule,
};
pub use monitor::{detect, FlowReport, FlowSample, MonitorConfig, Verdict};
pub use orchestrator::{
    tune_transfers, Orchestrator, OrchestratorConfig, OrchestratorError, TuningConfig,
};
pub use service::{ApiResponse, EndpointAllocation, StatusDoc};
pub use simulator::{Scenario, SimResult, Simulation};
pub use store::{Store, StoreError, StoreSnapshot};
pub use topology::TopologyFile;
