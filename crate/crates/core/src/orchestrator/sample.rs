//! Throughput sampling and underperformance remediation.

use tracing::warn;

use super::{tune_transfers, Orchestrator, Result};
use crate::adapters::AdapterError;
use crate::model::RuleState;
use crate::monitor::{detect, FlowSample, Verdict};
use crate::store::LinkTuning;

impl Orchestrator {
    /// Samples each PROVISIONED rule's source endpoint and refreshes its
    /// verdict. A rule newly found UNDERPERFORMING gets its link's active count doubled.
    pub fn sample(&self) -> Result<usize> {
        let now = self.now();
        let (rules, circuits) = self
            .store
            .read(|tx| Ok((tx.rules_in(&[RuleState::Provisioned])?, tx.circuits()?)))?;
        let cfg = &self.cfg.monitor;
        let mut count = 0;
        for rule in &rules {
            let Some(endpoint) = &rule.src_endpoint else {
                continue;
            };
            let allocated = rule
                .circuit_id
                .as_deref()
                .and_then(|id| circuits.iter().find(|c| c.circuit_id == id))
                .map_or(rule.allocated_gbps.unwrap_or(0), |c| c.bandwidth_gbps);
            let (observed, no_data) = match self
                .adapters
                .metrics
                .throughput(endpoint, cfg.sample_window_s)
            {
                Ok(v) if v.is_finite() => (v.max(0.0), false),
                Ok(_) => (0.0, true),
                Err(AdapterError::NoData(_)) => (0.0, true),
                Err(e) => {
                    warn!(rule = %rule.rule_id, "metrics query failed: {e}");
                    (0.0, true)
                }
            };
            let sample = FlowSample {
                rule_id: rule.rule_id.clone(),
                t: now,
                observed_gbps: observed,
                allocated_gbps: allocated,
                no_data,
            };
            let stats = self.adapters.transfers.job_stats(&rule.rule_id).ok();
            let (previous, verdict) = self.store.write(|tx| {
                tx.append_sample(&sample)?;
                if let Some(s) = &stats {
                    tx.put_job_stats(s)?;
                }
                let previous = tx.verdict(&rule.rule_id)?;
                let verdict = detect(&tx.samples(&rule.rule_id)?, cfg).ok();
                if let Some(v) = verdict {
                    tx.set_verdict(&rule.rule_id, v)?;
                }
                Ok((previous, verdict))
            })?;
            count += 1;
            if let Some(v) = verdict.filter(|_| verdict != previous) {
                self.note("sample", format!("{} verdict {v}", rule.rule_id));
                if v == Verdict::Underperforming {
                    self.remediate(&rule.src, &rule.dst, allocated)?;
                }
            }
        }
        Ok(count)
    }

    /// Doubles the active-transfer count on a link (up to the maximum).
    fn remediate(&self, src: &str, dst: &str, bandwidth: u64) -> Result<()> {
        let t = &self.cfg.tuning;
        let existing = self.store.read(|tx| tx.link(src, dst))?;
        let boost = existing.as_ref().map_or(0, |l| l.boost);
        let base = tune_transfers(bandwidth, self.cfg.rtt.get(src, dst), t);
        let current = existing.as_ref().map_or(base, |l| l.active);
        if current >= t.max_active {
            self.note(
                "sample",
                format!("link {src} -> {dst} already at {current} active transfers"),
            );
            return Ok(());
        }
        let active = current.saturating_mul(2).min(t.max_active);
        warn!(
            src,
            dst, active, "underperforming flow; raising active transfers"
        );
        self.push_link(LinkTuning {
            src: src.to_string(),
            dst: dst.to_string(),
            active,
            boost: boost + 1,
            applied: false,
        })
    }
}
