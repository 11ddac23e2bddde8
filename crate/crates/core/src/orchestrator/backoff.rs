//! Exponential retry backoff.

use serde::{Deserialize, Serialize};

use crate::model::Millis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackoffConfig {
    pub initial_ms: Millis,
    pub factor: u32,
    pub cap_ms: Millis,
}

impl Default for BackoffConfig {
    fn default() -> Self {
        BackoffConfig {
            initial_ms: 1_000,
            factor: 2,
            cap_ms: 60_000,
        }
    }
}

impl BackoffConfig {
    /// Delay before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Millis {
        let mut d = self.initial_ms;
        for _ in 1..attempt.max(1) {
            d = d.saturating_mul(self.factor as Millis);
            if d >= self.cap_ms {
                return self.cap_ms;
            }
        }
        d.min(self.cap_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubles_then_caps() {
        let b = BackoffConfig::default();
        let delays: Vec<_> = (1..=8).map(|a| b.delay(a)).collect();
        assert_eq!(
            delays,
            [1_000, 2_000, 4_000, 8_000, 16_000, 32_000, 60_000, 60_000]
        );
        assert_eq!(b.delay(1_000), 60_000);
    }
}
