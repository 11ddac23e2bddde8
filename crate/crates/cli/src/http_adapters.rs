//! Blocking HTTP clients for the four external systems.
//!
//! The request and response shapes mirror the core adapter types as JSON.
//! They have been exercised against in-process test servers only.

use std::time::Duration;

use flowdirector_core::adapters::{
    AdapterError, AdapterResult, CircuitProvider, CircuitRequest, EventCursor, JobStats,
    MetricsSource, ProviderCircuit, RuleBatch, RuleSource, TransferTool,
};
use flowdirector_core::model::{Endpoint, Gbps};
use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

const TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Serialize, Deserialize)]
pub struct CreatedCircuit {
    pub circuit_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BandwidthBody {
    pub bandwidth_gbps: Gbps,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ActiveBody {
    pub active: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ThroughputBody {
    pub gbps: f64,
}

/// How a client maps transport failures and status codes onto adapter errors.
#[derive(Clone)]
struct Http {
    client: Client,
    base: String,
    transient: fn(String) -> AdapterError,
    not_found: fn(String) -> AdapterError,
}

impl Http {
    fn new(
        base: &str,
        transient: fn(String) -> AdapterError,
        not_found: fn(String) -> AdapterError,
    ) -> Self {
        Http {
            client: Client::builder()
                .timeout(TIMEOUT)
                .build()
                .expect("http client builds"),
            base: base.trim_end_matches('/').to_string(),
            transient,
            not_found,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn send(&self, req: RequestBuilder, what: &str) -> AdapterResult<Response> {
        let resp = req.send().map_err(|e| (self.transient)(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body = resp.text().unwrap_or_default();
        Err(match status {
            StatusCode::NOT_FOUND => (self.not_found)(what.to_string()),
            StatusCode::CONFLICT => AdapterError::EndpointBusy(what.to_string()),
            StatusCode::BAD_REQUEST | StatusCode::UNPROCESSABLE_ENTITY => {
                AdapterError::InvalidRequest(format!("{what}: {body}"))
            }
            _ => (self.transient)(format!("{what}: HTTP {status}: {body}")),
        })
    }

    fn json<T: DeserializeOwned>(&self, req: RequestBuilder, what: &str) -> AdapterResult<T> {
        self.send(req, what)?
            .json()
            .map_err(|e| (self.transient)(format!("{what}: bad response body: {e}")))
    }
}

/// `GET /rules?since=<cursor>`.
pub struct HttpRuleSource {
    http: Http,
}

impl HttpRuleSource {
    pub fn new(base: &str) -> Self {
        HttpRuleSource {
            http: Http::new(
                base,
                AdapterError::SourceUnavailable,
                AdapterError::SourceUnavailable,
            ),
        }
    }
}

impl RuleSource for HttpRuleSource {
    fn poll(&self, since: EventCursor) -> AdapterResult<RuleBatch> {
        let req = self
            .http
            .client
            .get(self.http.url("/rules"))
            .query(&[("since", since)]);
        self.http.json(req, "rules")
    }
}

/// `GET /endpoints/<site>`, `POST /circuits`, `GET|PATCH|DELETE /circuits/<id>`.
pub struct HttpCircuitProvider {
    http: Http,
}

impl HttpCircuitProvider {
    pub fn new(base: &str) -> Self {
        HttpCircuitProvider {
            http: Http::new(base, AdapterError::Provider, AdapterError::UnknownCircuit),
        }
    }
}

impl CircuitProvider for HttpCircuitProvider {
    fn list_endpoints(&self, site: &str) -> AdapterResult<Vec<Endpoint>> {
        let req = self
            .http
            .client
            .get(self.http.url(&format!("/endpoints/{site}")));
        match self.http.json(req, site) {
            Err(AdapterError::UnknownCircuit(s)) => Err(AdapterError::UnknownSite(s)),
            other => other,
        }
    }

    fn create(&self, req: &CircuitRequest) -> AdapterResult<String> {
        let what = format!("{}/{}", req.src_endpoint, req.dst_endpoint);
        let r = self.http.client.post(self.http.url("/circuits")).json(req);
        let created: CreatedCircuit = self.http.json(r, &what)?;
        Ok(created.circuit_id)
    }

    fn status(&self, circuit_id: &str) -> AdapterResult<ProviderCircuit> {
        let req = self
            .http
            .client
            .get(self.http.url(&format!("/circuits/{circuit_id}")));
        self.http.json(req, circuit_id)
    }

    fn modify(&self, circuit_id: &str, bandwidth_gbps: Gbps) -> AdapterResult<()> {
        let req = self
            .http
            .client
            .patch(self.http.url(&format!("/circuits/{circuit_id}")))
            .json(&BandwidthBody { bandwidth_gbps });
        self.http.send(req, circuit_id).map(drop)
    }

    fn teardown(&self, circuit_id: &str) -> AdapterResult<()> {
        let req = self
            .http
            .client
            .delete(self.http.url(&format!("/circuits/{circuit_id}")));
        self.http.send(req, circuit_id).map(drop)
    }
}

/// `PUT /links/<src>/<dst>/active`, `GET /jobs/<rule_id>`.
pub struct HttpTransferTool {
    http: Http,
}

impl HttpTransferTool {
    pub fn new(base: &str) -> Self {
        HttpTransferTool {
            http: Http::new(
                base,
                AdapterError::ToolUnavailable,
                AdapterError::UnknownRule,
            ),
        }
    }
}

impl TransferTool for HttpTransferTool {
    fn set_active(&self, src_site: &str, dst_site: &str, active: u32) -> AdapterResult<()> {
        let req = self
            .http
            .client
            .put(
                self.http
                    .url(&format!("/links/{src_site}/{dst_site}/active")),
            )
            .json(&ActiveBody { active });
        self.http
            .send(req, &format!("{src_site}/{dst_site}"))
            .map(drop)
    }

    fn job_stats(&self, rule_id: &str) -> AdapterResult<JobStats> {
        let req = self
            .http
            .client
            .get(self.http.url(&format!("/jobs/{rule_id}")));
        self.http.json(req, rule_id)
    }
}

/// `GET /throughput?endpoint=<e>&window=<s>`.
pub struct HttpMetricsSource {
    http: Http,
}

impl HttpMetricsSource {
    pub fn new(base: &str) -> Self {
        HttpMetricsSource {
            http: Http::new(base, AdapterError::NoData, AdapterError::NoData),
        }
    }
}

impl MetricsSource for HttpMetricsSource {
    fn throughput(&self, endpoint: &str, window_s: u64) -> AdapterResult<f64> {
        let req = self.http.client.get(self.http.url("/throughput")).query(&[
            ("endpoint", endpoint.to_string()),
            ("window", window_s.to_string()),
        ]);
        let body: ThroughputBody = self.http.json(req, endpoint)?;
        Ok(body.gbps)
    }
}
