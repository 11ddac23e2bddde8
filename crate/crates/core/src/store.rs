//! Transactional persistence for everything the daemons share.
//!
//! Backed by SQLite in WAL mode. Every mutation goes through [`Store::write`],
//! which commits atomically or not at all. Rule state changes are
//! compare-and-swap on `(rule_id, expected_state)`, so two daemons racing on
//! the same rule see exactly one winner.

use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use rusqlite::{params, Connection, OptionalExtension, TransactionBehavior};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::JobStats;
use crate::model::{self, Circuit, Endpoint, Millis, ModelError, RuleState, Site, TransferRule};
use crate::monitor::{FlowReport, FlowSample, Verdict};

pub const SCHEMA_VERSION: i64 = 1;

const SCHEMA: &str = "
CREATE TABLE meta (key TEXT PRIMARY KEY, value INTEGER NOT NULL);
CREATE TABLE sites (name TEXT PRIMARY KEY, capacity INTEGER NOT NULL, ord INTEGER NOT NULL);
CREATE TABLE endpoints (
    site TEXT NOT NULL,
    name TEXT NOT NULL,
    rule_id TEXT,
    circuit_id TEXT,
    PRIMARY KEY (site, name)
);
CREATE UNIQUE INDEX endpoints_rule ON endpoints (rule_id, site) WHERE rule_id IS NOT NULL;
CREATE TABLE rules (rule_id TEXT PRIMARY KEY, state TEXT NOT NULL, created_at INTEGER NOT NULL, doc TEXT NOT NULL);
CREATE TABLE circuits (circuit_id TEXT PRIMARY KEY, status TEXT NOT NULL, doc TEXT NOT NULL);
CREATE TABLE samples (rule_id TEXT NOT NULL, t INTEGER NOT NULL, observed REAL NOT NULL, allocated INTEGER NOT NULL, idle INTEGER NOT NULL);
CREATE INDEX samples_rule ON samples (rule_id, t);
CREATE TABLE job_stats (rule_id TEXT PRIMARY KEY, doc TEXT NOT NULL);
CREATE TABLE verdicts (rule_id TEXT PRIMARY KEY, verdict TEXT NOT NULL);
CREATE TABLE reports (rule_id TEXT PRIMARY KEY, doc TEXT NOT NULL);
CREATE TABLE links (src TEXT NOT NULL, dst TEXT NOT NULL, active INTEGER NOT NULL, boost INTEGER NOT NULL, applied INTEGER NOT NULL, PRIMARY KEY (src, dst));
";

const EXPECTED_TABLES: [&str; 10] = [
    "circuits",
    "endpoints",
    "job_stats",
    "links",
    "meta",
    "reports",
    "rules",
    "samples",
    "sites",
    "verdicts",
];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store is corrupt: {0}")]
    Corrupt(String),
    #[error("conflicting update on {0}; re-read and retry")]
    Conflict(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0} already exists")]
    Duplicate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
}

impl StoreError {
    pub fn is_conflict(&self) -> bool {
        matches!(self, StoreError::Conflict(_))
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Link tuning desired by the orchestrator, pushed to the transfer tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkTuning {
    pub src: String,
    pub dst: String,
    pub active: u32,
    /// Times the count was doubled as underperformance remediation.
    pub boost: u32,
    pub applied: bool,
}

/// Everything committed in the store, in a canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub schema_version: i64,
    pub rule_cursor: u64,
    pub sites: Vec<Site>,
    pub rules: Vec<TransferRule>,
    pub circuits: Vec<Circuit>,
    pub samples: Vec<FlowSample>,
    pub job_stats: Vec<JobStats>,
    pub verdicts: Vec<(String, Verdict)>,
    pub reports: Vec<FlowReport>,
    pub links: Vec<LinkTuning>,
}

impl StoreSnapshot {
    /// Canonical serialization used for byte-level comparisons.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn rule(&self, rule_id: &str) -> Option<&TransferRule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }
}

pub struct Store {
    conn: Mutex<Connection>,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("path", &self.path).finish()
    }
}

impl Store {
    /// Opens (or creates) the store at `path`. An existing file that is not
    /// a store of the current schema is rejected, never reinitialized.
    pub fn open(path: impl AsRef<Path>) -> Result<Store> {
        let path = path.as_ref();
        let conn = Connection::open(path).map_err(corrupt)?;
        let store = Store {
            conn: Mutex::new(conn),
            path: Some(path.to_path_buf()),
        };
        store.init()?;
        Ok(store)
    }

    pub fn open_in_memory() -> Result<Store> {
        let store = Store {
            conn: Mutex::new(Connection::open_in_memory()?),
            path: None,
        };
        store.init()?;
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn init(&self) -> Result<()> {
        let conn = self.lock();
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        if self.path.is_some() {
            let mode: String = conn
                .query_row("PRAGMA journal_mode=WAL", [], |r| r.get(0))
                .map_err(corrupt)?;
            if !mode.eq_ignore_ascii_case("wal") {
                return Err(StoreError::Corrupt(format!(
                    "cannot enable WAL (got {mode})"
                )));
            }
            conn.execute_batch("PRAGMA synchronous=NORMAL;")
                .map_err(corrupt)?;
        }
        let mut tables: Vec<String> = conn
            .prepare("SELECT name FROM sqlite_master WHERE type = 'table' ORDER BY name")
            .and_then(|mut st| {
                st.query_map([], |r| r.get::<_, String>(0))?
                    .collect::<rusqlite::Result<Vec<_>>>()
            })
            .map_err(corrupt)?;
        tables.retain(|t| !t.starts_with("sqlite_"));

        if tables.is_empty() {
            conn.execute_batch(&format!(
                "BEGIN; {SCHEMA} INSERT INTO meta VALUES ('schema_version', {SCHEMA_VERSION}); \
                 INSERT INTO meta VALUES ('rule_cursor', 0); COMMIT;"
            ))?;
            return Ok(());
        }
        if tables != EXPECTED_TABLES {
            return Err(StoreError::Corrupt(format!("unexpected tables {tables:?}")));
        }
        let version: Option<i64> = conn
            .query_row(
                "SELECT value FROM meta WHERE key = 'schema_version'",
                [],
                |r| r.get(0),
            )
            .optional()
            .map_err(corrupt)?;
        match version {
            Some(SCHEMA_VERSION) => {}
            other => {
                return Err(StoreError::Corrupt(format!(
                    "schema version {other:?}, expected {SCHEMA_VERSION}"
                )))
            }
        }
        let check: String = conn
            .query_row("PRAGMA quick_check", [], |r| r.get(0))
            .map_err(corrupt)?;
        if check != "ok" {
            return Err(StoreError::Corrupt(check));
        }
        drop(conn);
        // Decode every document once so damage surfaces at startup.
        self.snapshot()?;
        Ok(())
    }

    fn lock(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Runs `f` inside a read transaction (a consistent snapshot).
    pub fn read<T>(&self, f: impl FnOnce(&Txn<'_>) -> Result<T>) -> Result<T> {
        let mut conn = self.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Deferred)?;
        let txn = Txn { tx };
        let out = f(&txn)?;
        txn.tx.rollback()?;
        Ok(out)
    }

    /// Runs `f` inside a write transaction; commits iff `f` returns `Ok`.
    pub fn write<T>(&self, f: impl FnOnce(&Txn<'_>) -> Result<T>) -> Result<T> {
        let mut conn = self.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let txn = Txn { tx };
        let out = f(&txn)?;
        txn.tx.commit()?;
        Ok(out)
    }

    pub fn snapshot(&self) -> Result<StoreSnapshot> {
        self.read(|tx| tx.snapshot())
    }
}

fn corrupt(e: rusqlite::Error) -> StoreError {
    StoreError::Corrupt(e.to_string())
}

fn decode<T: DeserializeOwned>(what: &str, doc: &str) -> Result<T> {
    serde_json::from_str(doc).map_err(|e| StoreError::Corrupt(format!("{what}: {e}")))
}

fn encode<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("domain values serialize")
}

/// An open transaction. Obtained through [`Store::read`] / [`Store::write`].
pub struct Txn<'c> {
    tx: rusqlite::Transaction<'c>,
}

impl Txn<'_> {
    fn meta(&self, key: &str) -> Result<i64> {
        Ok(self
            .tx
            .query_row("SELECT value FROM meta WHERE key = ?1", [key], |r| r.get(0))?)
    }

    pub fn rule_cursor(&self) -> Result<u64> {
        Ok(self.meta("rule_cursor")? as u64)
    }

    pub fn set_rule_cursor(&self, cursor: u64) -> Result<()> {
        self.tx.execute(
            "UPDATE meta SET value = ?1 WHERE key = 'rule_cursor'",
            [cursor as i64],
        )?;
        Ok(())
    }

    // --- sites and endpoints -------------------------------------------

    /// Inserts or updates a site and adds any endpoints not yet known.
    pub fn upsert_site(&self, site: &Site) -> Result<()> {
        site.validate()?;
        let ord: i64 =
            self.tx
                .query_row("SELECT COALESCE(MAX(ord), -1) + 1 FROM sites", [], |r| {
                    r.get(0)
                })?;
        self.tx.execute(
            "INSERT INTO sites (name, capacity, ord) VALUES (?1, ?2, ?3)
             ON CONFLICT(name) DO UPDATE SET capacity = excluded.capacity",
            params![site.name, site.port_capacity as i64, ord],
        )?;
        for ep in &site.endpoints {
            self.tx.execute(
                "INSERT OR IGNORE INTO endpoints (site, name) VALUES (?1, ?2)",
                params![site.name, ep.name],
            )?;
        }
        Ok(())
    }

    /// Sites in registration order, endpoints sorted by name.
    pub fn sites(&self) -> Result<Vec<Site>> {
        let mut st = self
            .tx
            .prepare("SELECT name, capacity FROM sites ORDER BY ord")?;
        let heads: Vec<(String, i64)> = st
            .query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?
            .collect::<rusqlite::Result<_>>()?;
        heads
            .into_iter()
            .map(|(name, cap)| {
                let endpoints = self.endpoints(&name)?;
                Ok(Site {
                    name,
                    port_capacity: cap as u64,
                    endpoints,
                })
            })
            .collect()
    }

    pub fn endpoints(&self, site: &str) -> Result<Vec<Endpoint>> {
        let mut st = self.tx.prepare(
            "SELECT name, site, rule_id, circuit_id FROM endpoints WHERE site = ?1 ORDER BY name",
        )?;
        let eps = st
            .query_map([site], |r| {
                Ok(Endpoint {
                    name: r.get(0)?,
                    site: r.get(1)?,
                    in_use_by: r.get(2)?,
                    circuit_id: r.get(3)?,
                })
            })?
            .collect::<rusqlite::Result<_>>()?;
        Ok(eps)
    }

    /// Binds an endpoint to `rule_id` if it is still unclaimed and bound to
    /// `circuit` (pass `None` for a free endpoint).
    pub fn claim_endpoint(
        &self,
        site: &str,
        name: &str,
        rule_id: &str,
        circuit: Option<&str>,
    ) -> Result<()> {
        let n = self.tx.execute(
            "UPDATE endpoints SET rule_id = ?1
             WHERE site = ?2 AND name = ?3 AND rule_id IS NULL AND circuit_id IS ?4",
            params![rule_id, site, name, circuit],
        )?;
        if n != 1 {
            return Err(StoreError::Conflict(format!("endpoint {site}/{name}")));
        }
        Ok(())
    }

    pub fn release_rule_endpoints(&self, rule_id: &str) -> Result<()> {
        self.tx.execute(
            "UPDATE endpoints SET rule_id = NULL WHERE rule_id = ?1",
            [rule_id],
        )?;
        Ok(())
    }

    pub fn bind_circuit_endpoints(&self, circuit: &Circuit) -> Result<()> {
        for (site, name) in [
            (&circuit.src_site, &circuit.src_endpoint),
            (&circuit.dst_site, &circuit.dst_endpoint),
        ] {
            let n = self.tx.execute(
                "UPDATE endpoints SET circuit_id = ?1 WHERE site = ?2 AND name = ?3
                 AND (circuit_id IS NULL OR circuit_id = ?1)",
                params![circuit.circuit_id, site, name],
            )?;
            if n != 1 {
                return Err(StoreError::Conflict(format!("endpoint {site}/{name}")));
            }
        }
        Ok(())
    }

    pub fn free_circuit_endpoints(&self, circuit_id: &str) -> Result<()> {
        self.tx.execute(
            "UPDATE endpoints SET circuit_id = NULL WHERE circuit_id = ?1",
            [circuit_id],
        )?;
        Ok(())
    }

    // --- rules -------------------------------------------------------------

    pub fn rule(&self, rule_id: &str) -> Result<Option<TransferRule>> {
        let doc: Option<String> = self
            .tx
            .query_row("SELECT doc FROM rules WHERE rule_id = ?1", [rule_id], |r| {
                r.get(0)
            })
            .optional()?;
        doc.map(|d| decode("rule", &d)).transpose()
    }

    /// All rules ordered by creation time, then id.
    pub fn rules(&self) -> Result<Vec<TransferRule>> {
        self.rules_where("1 = 1")
    }

    pub fn rules_in(&self, states: &[RuleState]) -> Result<Vec<TransferRule>> {
        if states.is_empty() {
            return Ok(Vec::new());
        }
        let list = states
            .iter()
            .map(|s| format!("'{}'", s.as_str()))
            .collect::<Vec<_>>()
            .join(",");
        self.rules_where(&format!("state IN ({list})"))
    }

    fn rules_where(&self, cond: &str) -> Result<Vec<TransferRule>> {
        let mut st = self.tx.prepare(&format!(
            "SELECT doc FROM rules WHERE {cond} ORDER BY created_at, rule_id"
        ))?;
        let docs: Vec<String> = st
            .query_map([], |r| r.get(0))?
            .collect::<rusqlite::Result<_>>()?;
        docs.iter().map(|d| decode("rule", d)).collect()
    }

    pub fn insert_rule(&self, rule: &TransferRule) -> Result<()> {
        rule.validate()?;
        let n = self.tx.execute(
            "INSERT OR IGNORE INTO rules (rule_id, state, created_at, doc) VALUES (?1, ?2, ?3, ?4)",
            params![
                rule.rule_id,
                rule.state.as_str(),
                rule.created_at as i64,
                encode(rule)
            ],
        )?;
        if n != 1 {
            return Err(StoreError::Duplicate(format!("rule {}", rule.rule_id)));
        }
        Ok(())
    }

    /// Overwrites `rule` if its stored state is still `expected`.
    pub fn cas_rule(&self, rule: &TransferRule, expected: RuleState) -> Result<()> {
        rule.validate()?;
        let n = self.tx.execute(
            "UPDATE rules SET state = ?1, doc = ?2 WHERE rule_id = ?3 AND state = ?4",
            params![
                rule.state.as_str(),
                encode(rule),
                rule.rule_id,
                expected.as_str()
            ],
        )?;
        if n != 1 {
            return Err(StoreError::Conflict(format!("rule {}", rule.rule_id)));
        }
        Ok(())
    }

    /// Moves `rule_id` from `expected` to `to` with CAS; `edit` may adjust
    /// fields on the way.
    /// Endpoint claims are released when the rule enters FAILED or CANCELLED.
    pub fn transition_rule(
        &self,
        rule_id: &str,
        expected: RuleState,
        target: RuleState,
        now: Millis,
        edit: impl FnOnce(&mut TransferRule),
    ) -> Result<TransferRule> {
        let current = self
            .rule(rule_id)?
            .ok_or_else(|| StoreError::NotFound(format!("rule {rule_id}")))?;
        if current.state != expected {
            return Err(StoreError::Conflict(format!(
                "rule {rule_id} is {} not {expected}",
                current.state
            )));
        }
        let mut next = model::transition(&current, target, now)?;
        edit(&mut next);
        self.cas_rule(&next, expected)?;
        if matches!(target, RuleState::Failed | RuleState::Cancelled) {
            self.release_rule_endpoints(rule_id)?;
        }
        Ok(next)
    }

    /// Field update without a state change, guarded by the current state.
    pub fn update_rule(
        &self,
        rule_id: &str,
        expected: RuleState,
        now: Millis,
        edit: impl FnOnce(&mut TransferRule),
    ) -> Result<TransferRule> {
        let mut rule = self
            .rule(rule_id)?
            .ok_or_else(|| StoreError::NotFound(format!("rule {rule_id}")))?;
        if rule.state != expected {
            return Err(StoreError::Conflict(format!(
                "rule {rule_id} is {} not {expected}",
                rule.state
            )));
        }
        edit(&mut rule);
        rule.state = expected;
        rule.updated_at = now.max(rule.updated_at);
        self.cas_rule(&rule, expected)?;
        Ok(rule)
    }

    // --- circuits ----------------------------------------------------------

    pub fn circuit(&self, circuit_id: &str) -> Result<Option<Circuit>> {
        let doc: Option<String> = self
            .tx
            .query_row(
                "SELECT doc FROM circuits WHERE circuit_id = ?1",
                [circuit_id],
                |r| r.get(0),
            )
            .optional()?;
        doc.map(|d| decode("circuit", &d)).transpose()
    }

    pub fn circuits(&self) -> Result<Vec<Circuit>> {
        let mut st = self
            .tx
            .prepare("SELECT doc FROM circuits ORDER BY circuit_id")?;
        let docs: Vec<String> = st
            .query_map([], |r| r.get(0))?
            .collect::<rusqlite::Result<_>>()?;
        docs.iter().map(|d| decode("circuit", d)).collect()
    }

    pub fn put_circuit(&self, circuit: &Circuit) -> Result<()> {
        self.tx.execute(
            "INSERT INTO circuits (circuit_id, status, doc) VALUES (?1, ?2, ?3)
             ON CONFLICT(circuit_id) DO UPDATE SET status = excluded.status, doc = excluded.doc",
            params![circuit.circuit_id, circuit.status.as_str(), encode(circuit)],
        )?;
        Ok(())
    }

    // --- monitoring --------------------------------------------------------

    pub fn append_sample(&self, sample: &FlowSample) -> Result<()> {
        self.tx.execute(
            "INSERT INTO samples (rule_id, t, observed, allocated, idle) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![
                sample.rule_id,
                sample.t as i64,
                sample.observed_gbps,
                sample.allocated_gbps as i64,
                sample.no_data
            ],
        )?;
        Ok(())
    }

    pub fn samples(&self, rule_id: &str) -> Result<Vec<FlowSample>> {
        let mut st = self.tx.prepare(
            "SELECT rule_id, t, observed, allocated, idle FROM samples WHERE rule_id = ?1 ORDER BY t, rowid",
        )?;
        let rows = st
            .query_map([rule_id], |r| {
                Ok(FlowSample {
                    rule_id: r.get(0)?,
                    t: r.get::<_, i64>(1)? as u64,
                    observed_gbps: r.get(2)?,
                    allocated_gbps: r.get::<_, i64>(3)? as u64,
                    no_data: r.get(4)?,
                })
            })?
            .collect::<rusqlite::Result<_>>()?;
        Ok(rows)
    }

    fn all_samples(&self) -> Result<Vec<FlowSample>> {
        let mut st = self
            .tx
            .prepare("SELECT DISTINCT rule_id FROM samples ORDER BY rule_id")?;
        let ids: Vec<String> = st
            .query_map([], |r| r.get(0))?
            .collect::<rusqlite::Result<_>>()?;
        let mut out = Vec::new();
        for id in ids {
            out.extend(self.samples(&id)?);
        }
        Ok(out)
    }

    pub fn put_job_stats(&self, stats: &JobStats) -> Result<()> {
        self.tx.execute(
            "INSERT INTO job_stats (rule_id, doc) VALUES (?1, ?2)
             ON CONFLICT(rule_id) DO UPDATE SET doc = excluded.doc",
            params![stats.rule_id, encode(stats)],
        )?;
        Ok(())
    }

    pub fn job_stats(&self, rule_id: &str) -> Result<Option<JobStats>> {
        let doc: Option<String> = self
            .tx
            .query_row(
                "SELECT doc FROM job_stats WHERE rule_id = ?1",
                [rule_id],
                |r| r.get(0),
            )
            .optional()?;
        doc.map(|d| decode("job stats", &d)).transpose()
    }

    pub fn set_verdict(&self, rule_id: &str, verdict: Verdict) -> Result<()> {
        self.tx.execute(
            "INSERT INTO verdicts (rule_id, verdict) VALUES (?1, ?2)
             ON CONFLICT(rule_id) DO UPDATE SET verdict = excluded.verdict",
            params![rule_id, encode(&verdict)],
        )?;
        Ok(())
    }

    pub fn verdict(&self, rule_id: &str) -> Result<Option<Verdict>> {
        let doc: Option<String> = self
            .tx
            .query_row(
                "SELECT verdict FROM verdicts WHERE rule_id = ?1",
                [rule_id],
                |r| r.get(0),
            )
            .optional()?;
        doc.map(|d| decode("verdict", &d)).transpose()
    }

    /// Persists the final report for a rule. A rule has at most one.
    pub fn insert_report(&self, report: &FlowReport) -> Result<()> {
        let n = self.tx.execute(
            "INSERT OR IGNORE INTO reports (rule_id, doc) VALUES (?1, ?2)",
            params![report.rule_id, encode(report)],
        )?;
        if n != 1 {
            return Err(StoreError::Duplicate(format!("report {}", report.rule_id)));
        }
        Ok(())
    }

    pub fn report(&self, rule_id: &str) -> Result<Option<FlowReport>> {
        let doc: Option<String> = self
            .tx
            .query_row(
                "SELECT doc FROM reports WHERE rule_id = ?1",
                [rule_id],
                |r| r.get(0),
            )
            .optional()?;
        doc.map(|d| decode("report", &d)).transpose()
    }

    pub fn put_link(&self, link: &LinkTuning) -> Result<()> {
        self.tx.execute(
            "INSERT INTO links (src, dst, active, boost, applied) VALUES (?1, ?2, ?3, ?4, ?5)
             ON CONFLICT(src, dst) DO UPDATE SET active = excluded.active, boost = excluded.boost,
             applied = excluded.applied",
            params![link.src, link.dst, link.active, link.boost, link.applied],
        )?;
        Ok(())
    }

    pub fn links(&self) -> Result<Vec<LinkTuning>> {
        let mut st = self
            .tx
            .prepare("SELECT src, dst, active, boost, applied FROM links ORDER BY src, dst")?;
        let rows = st
            .query_map([], |r| {
                Ok(LinkTuning {
                    src: r.get(0)?,
                    dst: r.get(1)?,
                    active: r.get(2)?,
                    boost: r.get(3)?,
                    applied: r.get(4)?,
                })
            })?
            .collect::<rusqlite::Result<_>>()?;
        Ok(rows)
    }

    pub fn link(&self, src: &str, dst: &str) -> Result<Option<LinkTuning>> {
        Ok(self
            .links()?
            .into_iter()
            .find(|l| l.src == src && l.dst == dst))
    }

    pub fn snapshot(&self) -> Result<StoreSnapshot> {
        let mut verdicts = Vec::new();
        {
            let mut st = self
                .tx
                .prepare("SELECT rule_id, verdict FROM verdicts ORDER BY rule_id")?;
            let rows: Vec<(String, String)> = st
                .query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?
                .collect::<rusqlite::Result<_>>()?;
            for (id, v) in rows {
                verdicts.push((id, decode("verdict", &v)?));
            }
        }
        let mut reports = Vec::new();
        let mut job_stats = Vec::new();
        {
            let mut st = self
                .tx
                .prepare("SELECT doc FROM reports ORDER BY rule_id")?;
            let docs: Vec<String> = st
                .query_map([], |r| r.get(0))?
                .collect::<rusqlite::Result<_>>()?;
            for d in docs {
                reports.push(decode("report", &d)?);
            }
            let mut st = self
                .tx
                .prepare("SELECT doc FROM job_stats ORDER BY rule_id")?;
            let docs: Vec<String> = st
                .query_map([], |r| r.get(0))?
                .collect::<rusqlite::Result<_>>()?;
            for d in docs {
                job_stats.push(decode("job stats", &d)?);
            }
        }
        Ok(StoreSnapshot {
            schema_version: self.meta("schema_version")?,
            rule_cursor: self.rule_cursor()?,
            sites: self.sites()?,
            rules: self.rules()?,
            circuits: self.circuits()?,
            samples: self.all_samples()?,
            job_stats,
            verdicts,
            reports,
            links: self.links()?,
        })
    }
}
