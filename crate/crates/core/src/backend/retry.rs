use std::future::Future;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::rng::SplitMix64;

/// Exponential backoff with full jitter: attempt `k` (0-based) sleeps a
/// uniform draw from `[0, base * factor^k)` before retrying.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base_ms: u64,
    pub factor: f64,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_ms: 1000,
            factor: 2.0,
            max_attempts: 5,
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the sleep that follows failed attempt `attempt`.
    pub fn ceiling(&self, attempt: u32) -> Duration {
        let ms = self.base_ms as f64 * self.factor.powi(attempt as i32);
        Duration::from_millis(ms.min(u64::MAX as f64) as u64)
    }

    pub fn jittered(&self, attempt: u32, rng: &mut SplitMix64) -> Duration {
        self.ceiling(attempt).mul_f64(rng.unit())
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent. Returns the last error in the latter cases.
    pub async fn run<T, F, Fut>(&self, jitter_seed: u64, mut op: F) -> Result<T, BackendError>
    where
        F: FnMut(u32) -> Fut,
        Fut: Future<Output = Result<T, BackendError>>,
    {
        let mut rng = SplitMix64::new(jitter_seed);
        let attempts = self.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            match op(attempt).await {
                Ok(value) => return Ok(value),
                Err(err) if err.is_retryable() && attempt + 1 < attempts => {
                    let delay = self.jittered(attempt, &mut rng);
                    tracing::warn!(attempt, ?delay, error = %err, "retrying completion request");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}
