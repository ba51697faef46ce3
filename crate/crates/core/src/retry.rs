use std::thread;
use std::time::Duration;

/// Failure reported by a remote provider.
#[derive(Debug, Clone, thiserror::Error)]
pub enum ProviderError {
    /// Connection, timeout or 5xx failures. These are retried.
    #[error("transport failure: {0}")]
    Transport(String),
    /// The provider answered but the answer is unusable.
    #[error("provider rejected request: {0}")]
    Rejected(String),
}

/// Bounded retry with exponential backoff, applied to transport errors only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(250) }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self { attempts, base_delay: Duration::ZERO }
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let attempts = self.attempts.max(1);
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Err(ProviderError::Transport(msg)) if attempt < attempts => {
                    log_retry(attempt, &msg);
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

fn log_retry(attempt: u32, msg: &str) {
    if std::env::var_os("KARPA_DEBUG").is_some() {
        eprintln!("retrying after attempt {attempt}: {msg}");
    }
}
