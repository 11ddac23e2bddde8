//! Service configuration and the document loader shared by every input
//! file (configuration, topologies, scenarios).
//!
//! Files are TOML unless their extension is `.json`.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Gbps, Site};
use crate::monitor::MonitorConfig;
use crate::orchestrator::{BackoffConfig, OrchestratorConfig, RttTable, TuningConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Syntax or field error; the message names the line and field.
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

/// Parses `text` as TOML, or as JSON when `path` ends in `.json`.
pub fn parse_document<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, ConfigError> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string().trim_end().to_string())
    };
    parsed.map_err(|message| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

pub fn load_document<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_document(path, &text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiSection {
    pub listen: String,
}

impl Default for ApiSection {
    fn default() -> Self {
        ApiSection {
            listen: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocatorSection {
    pub granularity_gbps: Gbps,
}

impl Default for AllocatorSection {
    fn default() -> Self {
        AllocatorSection {
            granularity_gbps: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaemonSection {
    pub poll_interval_s: u64,
    pub reuse_window_s: u64,
    pub max_retries: u32,
    pub backoff_initial_s: u64,
    pub backoff_cap_s: u64,
}

impl Default for DaemonSection {
    fn default() -> Self {
        DaemonSection {
            poll_interval_s: 10,
            reuse_window_s: 600,
            max_retries: 3,
            backoff_initial_s: 1,
            backoff_cap_s: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterMode {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptersSection {
    pub mode: AdapterMode,
    pub rule_source_url: Option<String>,
    pub circuit_provider_url: Option<String>,
    pub transfer_tool_url: Option<String>,
    pub metrics_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSection {
    pub provision_delay_s: u64,
}

impl Default for MockSection {
    fn default() -> Self {
        MockSection {
            provision_delay_s: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerSection {
    pub rtt_ms: f64,
}

/// `[sites.<name>]` with optional `[sites.<name>.<peer>] rtt_ms = ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSection {
    pub capacity_gbps: Gbps,
    #[serde(default)]
    pub endpoints: Vec<String>,
    #[serde(flatten)]
    pub peers: IndexMap<String, PeerSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub store: StoreSection,
    #[serde(default)]
    pub api: ApiSection,
    #[serde(default)]
    pub allocator: AllocatorSection,
    #[serde(default)]
    pub orchestrator: DaemonSection,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub monitor: MonitorConfig,
    #[serde(default)]
    pub adapters: AdaptersSection,
    #[serde(default)]
    pub mock: MockSection,
    #[serde(default)]
    pub sites: IndexMap<String, SiteSection>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let cfg: Config = load_document(path)?;
        cfg.validate().map_err(|message| ConfigError::Invalid {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.orchestrator_config().validate()?;
        for (name, site) in &self.sites {
            for peer in site.peers.keys() {
                if !self.sites.contains_key(peer) {
                    return Err(format!("sites.{name}.{peer}: unknown peer site"));
                }
            }
            self.site(name).validate().map_err(|e| e.to_string())?;
        }
        if self.adapters.mode == AdapterMode::Http {
            let a = &self.adapters;
            for (key, url) in [
                ("rule_source_url", &a.rule_source_url),
                ("circuit_provider_url", &a.circuit_provider_url),
                ("transfer_tool_url", &a.transfer_tool_url),
                ("metrics_url", &a.metrics_url),
            ] {
                if url.is_none() {
                    return Err(format!("adapters.{key} is required in http mode"));
                }
            }
        }
        Ok(())
    }

    fn site(&self, name: &str) -> Site {
        let s = &self.sites[name];
        Site::new(name, s.capacity_gbps).with_endpoints(s.endpoints.iter().cloned())
    }

    /// Configured sites in file order.
    pub fn sites(&self) -> Vec<Site> {
        self.sites.keys().map(|n| self.site(n)).collect()
    }

    pub fn orchestrator_config(&self) -> OrchestratorConfig {
        let d = &self.orchestrator;
        let mut rtt = RttTable::default();
        for (name, site) in &self.sites {
            for (peer, p) in &site.peers {
                rtt.set(name, peer, p.rtt_ms);
            }
        }
        OrchestratorConfig {
            granularity_gbps: self.allocator.granularity_gbps,
            poll_interval_ms: d.poll_interval_s * 1000,
            reuse_window_s: d.reuse_window_s,
            max_retries: d.max_retries,
            backoff: BackoffConfig {
                initial_ms: d.backoff_initial_s * 1000,
                factor: 2,
                cap_ms: d.backoff_cap_s * 1000,
            },
            tuning: self.tuning.clone(),
            monitor: self.monitor.clone(),
            rtt,
        }
    }
}
