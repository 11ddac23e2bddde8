//! HTTP front end: read-only routes over the store, plus the daemon threads.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::Context;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use flowdirector_core::adapters::mock::{
    MockCircuitProvider, MockMetricsSource, MockRuleSource, MockTransferTool,
};
use flowdirector_core::config::AdapterMode;
use flowdirector_core::service::{self, ApiResponse};
use flowdirector_core::{Adapters, Clock, Config, MonitorConfig, Orchestrator, Store, SystemClock};
use indexmap::IndexMap;
use tokio::net::TcpListener;

use crate::http_adapters::{
    HttpCircuitProvider, HttpMetricsSource, HttpRuleSource, HttpTransferTool,
};

#[derive(Clone)]
pub struct ApiState {
    pub store: Arc<Store>,
    pub monitor: MonitorConfig,
}

pub fn router(state: ApiState) -> Router {
    Router::new()
        .route("/api/v1/allocation/{rule_id}", get(allocation))
        .route("/api/v1/status", get(status))
        .route("/api/v1/reports/{rule_id}", get(report))
        .with_state(state)
}

fn respond(r: ApiResponse) -> Response {
    let code = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (code, Json(r.body)).into_response()
}

/// Store reads are short but synchronous; keep them off the async workers.
async fn blocking(f: impl FnOnce() -> ApiResponse + Send + 'static) -> Response {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => respond(r),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn allocation(State(s): State<ApiState>, Path(rule_id): Path<String>) -> Response {
    blocking(move || service::allocation(&s.store, &rule_id)).await
}

async fn status(State(s): State<ApiState>) -> Response {
    blocking(move || service::status(&s.store)).await
}

async fn report(State(s): State<ApiState>, Path(rule_id): Path<String>) -> Response {
    blocking(move || service::report(&s.store, &rule_id, &s.monitor)).await
}

/// Adapters selected by `adapters.mode`.
pub fn build_adapters(cfg: &Config, clock: Arc<dyn Clock>) -> Adapters {
    let a = &cfg.adapters;
    match a.mode {
        AdapterMode::Http => {
            // Presence is checked by `Config::validate`.
            let url = |u: &Option<String>| u.clone().unwrap_or_default();
            Adapters {
                rules: Arc::new(HttpRuleSource::new(&url(&a.rule_source_url))),
                circuits: Arc::new(HttpCircuitProvider::new(&url(&a.circuit_provider_url))),
                transfers: Arc::new(HttpTransferTool::new(&url(&a.transfer_tool_url))),
                metrics: Arc::new(HttpMetricsSource::new(&url(&a.metrics_url))),
            }
        }
        AdapterMode::Mock => {
            let inventory: IndexMap<String, Vec<String>> = cfg
                .sites
                .iter()
                .map(|(name, s)| {
                    let eps = if s.endpoints.is_empty() {
                        (1..=4)
                            .map(|i| format!("{}-ep{i}", name.to_lowercase()))
                            .collect()
                    } else {
                        s.endpoints.clone()
                    };
                    (name.clone(), eps)
                })
                .collect();
            Adapters {
                rules: Arc::new(MockRuleSource::new(clock.clone())),
                circuits: Arc::new(
                    MockCircuitProvider::new(clock.clone(), inventory)
                        .with_provision_delay(cfg.mock.provision_delay_s * 1000),
                ),
                transfers: Arc::new(MockTransferTool::new()),
                metrics: Arc::new(MockMetricsSource::new(clock)),
            }
        }
    }
}

/// Runs the daemons and the API until interrupted.
pub fn serve(cfg: Config) -> anyhow::Result<()> {
    let path = &cfg.store.path;
    let store =
        Arc::new(Store::open(path).with_context(|| format!("opening store {}", path.display()))?);
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let orch = Arc::new(Orchestrator::new(
        store,
        build_adapters(&cfg, clock.clone()),
        clock,
        cfg.orchestrator_config(),
    ));
    orch.bootstrap(&cfg.sites()).context("registering sites")?;
    // A second connection: API reads never queue behind daemon writes.
    let api = ApiState {
        store: Arc::new(Store::open(path)?),
        monitor: cfg.monitor.clone(),
    };
    let addr: SocketAddr = cfg
        .api
        .listen
        .parse()
        .with_context(|| format!("api.listen {:?}", cfg.api.listen))?;

    let stop = Arc::new(AtomicBool::new(false));
    let daemons = orch.spawn(stop.clone());
    let rt = tokio::runtime::Runtime::new()?;
    let served = rt.block_on(async move {
        let listener = TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(api))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    });
    stop.store(true, Ordering::SeqCst);
    for d in daemons {
        let _ = d.join();
    }
    served
}
