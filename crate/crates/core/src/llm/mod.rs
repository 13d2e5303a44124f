//! Chat-completion client: request types, pluggable transports (live HTTPS,
//! in-process mock, cassette replay/record), retry with backoff and a
//! request budget.

pub mod cassette;
pub mod mock;
pub mod transport;
pub mod types;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

pub use cassette::{CassetteRecord, MatchMode, RecordingTransport, ReplayTransport};
pub use mock::MockTransport;
pub use transport::{LiveConfig, LiveTransport, Transport, TransportFailure};
pub use types::{DEFAULT_MAX_TOKENS, DEFAULT_MODEL, MAX_TEMPERATURE};
pub use types::{ChatRequest, ChatResponse, Message, RequestKind, RequestTag, Role, TransportReply};

pub const DEFAULT_REQUEST_BUDGET: u64 = 10_000;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("transport error on `{tag}` after {attempts} attempt(s): {message}")]
    Transport {
        tag: String,
        attempts: u32,
        message: String,
    },
    #[error("credential rejected: {0}")]
    Auth(String),
    #[error("request budget of {cap} exhausted")]
    BudgetExceeded { cap: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Backoff schedule: one retry per entry, waiting that long before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            backoff: vec![
                Duration::from_secs(1),
                Duration::from_secs(4),
                Duration::from_secs(16),
            ],
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { backoff: Vec::new() }
    }

    pub fn max_attempts(&self) -> u32 {
        self.backoff.len() as u32 + 1
    }
}

/// Experiment-wide cap on issued requests, shared between runs.
#[derive(Debug)]
pub struct RequestBudget {
    cap: u64,
    used: AtomicU64,
}

impl RequestBudget {
    pub fn new(cap: u64) -> Self {
        Self {
            cap,
            used: AtomicU64::new(0),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(u64::MAX)
    }

    fn try_acquire(&self) -> Result<(), LlmError> {
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| (u < self.cap).then_some(u + 1))
            .map(|_| ())
            .map_err(|_| LlmError::BudgetExceeded { cap: self.cap })
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }
}

impl Default for RequestBudget {
    fn default() -> Self {
        Self::new(DEFAULT_REQUEST_BUDGET)
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Client bound to one transport. Counts the requests it issues.
#[derive(Clone)]
pub struct LlmClient {
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    budget: Arc<RequestBudget>,
    sleeper: Sleeper,
    issued: Arc<AtomicU64>,
}

impl LlmClient {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            retry: RetryPolicy::default(),
            budget: Arc::new(RequestBudget::default()),
            sleeper: Arc::new(std::thread::sleep),
            issued: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_budget(mut self, budget: Arc<RequestBudget>) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    /// Same transport, budget and policy with a fresh request counter.
    pub fn fork(&self) -> Self {
        Self {
            issued: Arc::new(AtomicU64::new(0)),
            ..self.clone()
        }
    }

    pub fn requests_issued(&self) -> u64 {
        self.issued.load(Ordering::SeqCst)
    }

    pub fn transport_name(&self) -> &str {
        self.transport.name()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let max = self.retry.max_attempts();
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.budget.try_acquire()?;
            self.issued.fetch_add(1, Ordering::SeqCst);
            match self.transport.send(request) {
                Ok(reply) => {
                    return Ok(ChatResponse {
                        content: reply.content,
                        finish_reason: reply.finish_reason,
                        latency: reply.latency,
                        attempt_count: attempt,
                    })
                }
                Err(TransportFailure::Auth(m)) => return Err(LlmError::Auth(m)),
                Err(TransportFailure::Fatal(message)) => {
                    return Err(LlmError::Transport {
                        tag: request.request_tag.clone(),
                        attempts: attempt,
                        message,
                    })
                }
                Err(TransportFailure::Transient(message)) => {
                    if attempt >= max {
                        return Err(LlmError::Transport {
                            tag: request.request_tag.clone(),
                            attempts: attempt,
                            message,
                        });
                    }
                    let wait = self.retry.backoff[(attempt - 1) as usize];
                    tracing::warn!(tag = %request.request_tag, attempt, ?wait, %message, "transient failure, retrying");
                    (self.sleeper)(wait);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn req() -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![Message::system("s"), Message::user("u")],
            temperature: 1.0,
            max_tokens: 16,
            request_tag: "run=r;seed=1;day=1;nation=A;kind=action;attempt=1".into(),
        }
    }

    fn recording_sleeper() -> (Sleeper, Arc<Mutex<Vec<Duration>>>) {
        let log = Arc::new(Mutex::new(Vec::new()));
        let l = log.clone();
        (Arc::new(move |d| l.lock().unwrap().push(d)), log)
    }

    #[test]
    fn scripted_echo() {
        let client = LlmClient::new(Arc::new(MockTransport::fixed("{\"actions\":[]}")));
        let r = client.complete(&req()).unwrap();
        assert_eq!(r.content, "{\"actions\":[]}");
        assert_eq!(r.attempt_count, 1);
        assert_eq!(client.requests_issued(), 1);
    }

    #[test]
    fn retries_transient_with_backoff() {
        let mock = MockTransport::sequence(vec![
            Err(TransportFailure::Transient("503".into())),
            Err(TransportFailure::Transient("timeout".into())),
            Ok(TransportReply::text("ok")),
        ]);
        let (sleeper, log) = recording_sleeper();
        let client = LlmClient::new(Arc::new(mock)).with_sleeper(sleeper);
        let r = client.complete(&req()).unwrap();
        assert_eq!(r.attempt_count, 3);
        assert_eq!(
            *log.lock().unwrap(),
            vec![Duration::from_secs(1), Duration::from_secs(4)]
        );
    }

    #[test]
    fn gives_up_after_schedule() {
        let mock = MockTransport::new(|_| Err(TransportFailure::Transient("429".into())));
        let (sleeper, log) = recording_sleeper();
        let client = LlmClient::new(Arc::new(mock)).with_sleeper(sleeper);
        let err = client.complete(&req()).unwrap_err();
        assert!(matches!(err, LlmError::Transport { attempts: 4, .. }));
        assert_eq!(log.lock().unwrap().len(), 3);
    }

    #[test]
    fn auth_and_fatal_are_not_retried() {
        let client = LlmClient::new(Arc::new(MockTransport::new(|_| {
            Err(TransportFailure::Auth("401".into()))
        })));
        assert!(matches!(client.complete(&req()), Err(LlmError::Auth(_))));
        assert_eq!(client.requests_issued(), 1);
        let client = LlmClient::new(Arc::new(MockTransport::new(|_| {
            Err(TransportFailure::Fatal("miss".into()))
        })));
        let err = client.complete(&req()).unwrap_err();
        assert!(matches!(err, LlmError::Transport { attempts: 1, ref tag, .. } if tag.contains("nation=A")));
    }

    #[test]
    fn budget_is_shared_and_enforced() {
        let budget = Arc::new(RequestBudget::new(3));
        let mock: Arc<dyn Transport> = Arc::new(MockTransport::fixed("x"));
        let a = LlmClient::new(mock.clone()).with_budget(budget.clone());
        let b = a.fork();
        a.complete(&req()).unwrap();
        b.complete(&req()).unwrap();
        a.complete(&req()).unwrap();
        assert_eq!(b.complete(&req()), Err(LlmError::BudgetExceeded { cap: 3 }));
        assert_eq!(budget.used(), 3);
        assert_eq!((a.requests_issued(), b.requests_issued()), (2, 1));
    }

    #[test]
    fn invalid_request_rejected_before_sending() {
        let mock = Arc::new(MockTransport::fixed("x"));
        let client = LlmClient::new(mock.clone());
        let mut r = req();
        r.temperature = 3.0;
        assert!(matches!(client.complete(&r), Err(LlmError::InvalidRequest(_))));
        assert_eq!(mock.request_count(), 0);
    }
}
