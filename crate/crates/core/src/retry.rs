//! Bounded retries with exponential backoff for remote providers.

use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `retry` (1-based): base * 2^(retry-1).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.saturating_sub(1).min(16))
    }

    /// Runs `op` until it succeeds, returns a non-retriable error, or the
    /// retry budget is spent. Returns the value and the number of retries
    /// that were needed.
    pub fn run<T, E>(
        &self,
        mut op: impl FnMut() -> Result<T, E>,
        retriable: impl Fn(&E) -> bool,
    ) -> Result<(T, u32), (E, u32)> {
        let mut retries = 0;
        loop {
            match op() {
                Ok(v) => return Ok((v, retries)),
                Err(e) if retriable(&e) && retries < self.max_retries => {
                    retries += 1;
                    tracing::warn!(retry = retries, "retriable failure, backing off");
                    std::thread::sleep(self.delay(retries));
                }
                Err(e) => return Err((e, retries)),
            }
        }
    }
}
