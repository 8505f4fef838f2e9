//! Chat-completion client: a retrying, concurrency-limited wrapper over one
//! transport (HTTP, replay or recording).

mod http;
mod replay;

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use molrag_core::backend::{BackendError, BackendErrorKind, ChatBackend, CompletionResult, FinishReason};
use molrag_core::prompt::ChatPrompt;

pub use http::{redact, HttpTransport};
pub use replay::{RecordingTransport, ReplayError, ReplayTransport, ResponseSpec, ScriptStep};

use crate::config::{BackendConfig, BackendMode, RunConfig};

/// One successful exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub raw_text: String,
    pub finish_reason: FinishReason,
}

/// One failed exchange. `retry_after` carries a server hint when present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttemptError {
    pub error: BackendError,
    pub retry_after: Option<Duration>,
}

impl AttemptError {
    pub fn new(kind: BackendErrorKind, message: impl Into<String>) -> AttemptError {
        AttemptError {
            error: BackendError::new(kind, message),
            retry_after: None,
        }
    }
}

/// A single request/response exchange, with no retrying.
pub trait Transport: Send + Sync {
    fn send(&self, prompt: &ChatPrompt) -> Result<Reply, AttemptError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&self, prompt: &ChatPrompt) -> Result<Reply, AttemptError> {
        (**self).send(prompt)
    }
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, prompt: &ChatPrompt) -> Result<Reply, AttemptError> {
        (**self).send(prompt)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub max_backoff: Duration,
}

impl RetryPolicy {
    pub fn from_config(config: &BackendConfig) -> RetryPolicy {
        RetryPolicy {
            max_retries: config.max_retries,
            backoff_base: Duration::from_millis(config.retry_backoff_base_ms),
            max_backoff: Duration::from_secs(60),
        }
    }

    /// Delay before retry number `retry` (1-based): `base * 2^(retry-1)`
    /// capped at `max_backoff`, raised to any server hint, and never shorter
    /// than the previous delay.
    pub fn delay(&self, retry: u32, retry_after: Option<Duration>, previous: Duration) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        let exp = self.backoff_base.saturating_mul(factor).min(self.max_backoff);
        exp.max(retry_after.unwrap_or_default()).max(previous)
    }
}

struct Slots {
    free: Mutex<usize>,
    freed: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.freed.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

/// Retrying client over a transport. Safe to share between threads.
///
/// Rate-limit, network and server errors are retried with exponential
/// backoff up to `max_retries` times; other kinds return at once. A rate
/// limit seen by any caller holds back new dispatches until its delay ends.
pub struct Client<T> {
    transport: T,
    policy: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
    slots: Slots,
    not_before: Mutex<Option<Instant>>,
}

impl<T: Transport> Client<T> {
    pub fn new(transport: T, policy: RetryPolicy, concurrency: usize) -> Client<T> {
        Client::with_sleeper(transport, policy, concurrency, Arc::new(ThreadSleeper))
    }

    pub fn with_sleeper(transport: T, policy: RetryPolicy, concurrency: usize, sleeper: Arc<dyn Sleeper>) -> Client<T> {
        Client {
            transport,
            policy,
            sleeper,
            slots: Slots {
                free: Mutex::new(concurrency.max(1)),
                freed: Condvar::new(),
            },
            not_before: Mutex::new(None),
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn wait_for_gate(&self) {
        let until = *self.not_before.lock().unwrap();
        if let Some(until) = until {
            let now = Instant::now();
            if until > now {
                self.sleeper.sleep(until - now);
            }
        }
    }
}

impl<T: Transport> ChatBackend for Client<T> {
    fn complete(&self, prompt: &ChatPrompt) -> Result<CompletionResult, BackendError> {
        let _slot = self.slots.acquire();
        self.wait_for_gate();
        let start = Instant::now();
        let mut previous = Duration::ZERO;
        let mut attempt = 1u32;
        loop {
            match self.transport.send(prompt) {
                Ok(reply) => {
                    return Ok(CompletionResult {
                        raw_text: reply.raw_text,
                        finish_reason: reply.finish_reason,
                        latency: start.elapsed(),
                        attempt_count: attempt,
                    })
                }
                Err(AttemptError { mut error, retry_after }) => {
                    if !error.kind.is_transient() || attempt > self.policy.max_retries {
                        error.attempt_count = attempt;
                        return Err(error);
                    }
                    let delay = self.policy.delay(attempt, retry_after, previous);
                    if error.kind == BackendErrorKind::RateLimited {
                        let mut gate = self.not_before.lock().unwrap();
                        let until = Instant::now() + delay;
                        *gate = Some(gate.map_or(until, |g| g.max(until)));
                    }
                    log::warn!(
                        "{} on attempt {attempt} ({}); retrying in {} ms",
                        error.kind,
                        error.message,
                        delay.as_millis()
                    );
                    self.sleeper.sleep(delay);
                    previous = delay;
                    attempt += 1;
                }
            }
        }
    }
}

/// For replayed errors, where waiting buys nothing.
pub struct NoSleep;

impl Sleeper for NoSleep {
    fn sleep(&self, _: Duration) {}
}

/// The transport chosen by a run's backend mode.
pub enum AnyTransport {
    Http(HttpTransport),
    Replay(ReplayTransport),
    Record(RecordingTransport<HttpTransport>),
}

impl Transport for AnyTransport {
    fn send(&self, prompt: &ChatPrompt) -> Result<Reply, AttemptError> {
        match self {
            AnyTransport::Http(t) => t.send(prompt),
            AnyTransport::Replay(t) => t.send(prompt),
            AnyTransport::Record(t) => t.send(prompt),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConnectError {
    #[error("{0}")]
    Replay(#[from] ReplayError),
    #[error("cannot build HTTP client: {0}")]
    Http(#[from] reqwest::Error),
}

/// Builds the client for `config`. Replay mode constructs no HTTP client and
/// does not sleep between replayed retries.
pub fn connect(config: &RunConfig) -> Result<Client<AnyTransport>, ConnectError> {
    let policy = RetryPolicy::from_config(&config.backend);
    Ok(match &config.mode {
        BackendMode::Replay { fixture } => Client::with_sleeper(
            AnyTransport::Replay(ReplayTransport::open(fixture)?),
            policy,
            config.concurrency,
            Arc::new(NoSleep),
        ),
        BackendMode::Http => Client::new(AnyTransport::Http(HttpTransport::new(&config.backend)?), policy, config.concurrency),
        BackendMode::Record { fixture } => {
            let rec = RecordingTransport::new(HttpTransport::new(&config.backend)?);
            if let Ok(text) = std::fs::read_to_string(fixture) {
                rec.preload(&text, fixture)?;
            }
            Client::new(AnyTransport::Record(rec), policy, config.concurrency)
        }
    })
}

/// Writes the recorded fixture when recording; otherwise does nothing.
pub fn flush_recording(client: &Client<AnyTransport>, config: &RunConfig) -> std::io::Result<()> {
    if let (AnyTransport::Record(rec), BackendMode::Record { fixture }) = (client.transport(), &config.mode) {
        rec.write_fixture(fixture)?;
    }
    Ok(())
}
