use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde_json::Value;

use super::types::{ChatRequest, TransportReply};

/// Why a single exchange failed. Only `Transient` failures are retried.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    /// Timeouts, connection errors, HTTP 429 and 5xx.
    Transient(String),
    /// HTTP 401/403.
    Auth(String),
    /// Anything else: malformed replies, other 4xx, cassette misses.
    Fatal(String),
}

impl std::fmt::Display for TransportFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportFailure::Transient(m) => write!(f, "transient: {m}"),
            TransportFailure::Auth(m) => write!(f, "auth: {m}"),
            TransportFailure::Fatal(m) => write!(f, "fatal: {m}"),
        }
    }
}

/// Carries one chat request to a model and returns its reply.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<TransportReply, TransportFailure>;

    fn name(&self) -> &str;
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn send(&self, request: &ChatRequest) -> Result<TransportReply, TransportFailure> {
        (**self).send(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub endpoint: String,
    pub api_key: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<u32>,
}

impl LiveConfig {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            timeout: Duration::from_secs(120),
            max_in_flight: 4,
            requests_per_minute: None,
        }
    }
}

/// Bounds concurrent requests and, optionally, requests per rolling minute.
#[derive(Debug)]
pub struct Throttle {
    max_in_flight: usize,
    per_minute: Option<u32>,
    state: Mutex<ThrottleState>,
    cond: Condvar,
}

#[derive(Debug, Default)]
struct ThrottleState {
    in_flight: usize,
    started: VecDeque<Instant>,
}

pub struct ThrottlePermit<'a> {
    throttle: &'a Throttle,
}

impl Drop for ThrottlePermit<'_> {
    fn drop(&mut self) {
        let mut s = self.throttle.state.lock().expect("throttle lock");
        s.in_flight -= 1;
        self.throttle.cond.notify_all();
    }
}

impl Throttle {
    pub fn new(max_in_flight: usize, per_minute: Option<u32>) -> Self {
        Self {
            max_in_flight: max_in_flight.max(1),
            per_minute,
            state: Mutex::new(ThrottleState::default()),
            cond: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> ThrottlePermit<'_> {
        let window = Duration::from_secs(60);
        let mut s = self.state.lock().expect("throttle lock");
        loop {
            let now = Instant::now();
            while s.started.front().is_some_and(|t| now.duration_since(*t) >= window) {
                s.started.pop_front();
            }
            let rate_wait = match self.per_minute {
                Some(cap) if s.started.len() >= cap as usize => {
                    let oldest = *s.started.front().expect("nonempty window");
                    Some(window.saturating_sub(now.duration_since(oldest)))
                }
                _ => None,
            };
            if s.in_flight < self.max_in_flight && rate_wait.is_none() {
                s.in_flight += 1;
                s.started.push_back(now);
                return ThrottlePermit { throttle: self };
            }
            let wait = rate_wait.unwrap_or(Duration::from_millis(250));
            s = self.cond.wait_timeout(s, wait).expect("throttle lock").0;
        }
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().expect("throttle lock").in_flight
    }
}

/// HTTPS transport for OpenAI-compatible `/chat/completions` endpoints.
pub struct LiveTransport {
    config: LiveConfig,
    http: reqwest::blocking::Client,
    throttle: Throttle,
}

impl LiveTransport {
    pub fn new(config: LiveConfig) -> Result<Self, TransportFailure> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| TransportFailure::Fatal(format!("http client: {e}")))?;
        let throttle = Throttle::new(config.max_in_flight, config.requests_per_minute);
        Ok(Self {
            config,
            http,
            throttle,
        })
    }
}

pub(crate) fn parse_completion(body: &Value) -> Result<TransportReply, TransportFailure> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| TransportFailure::Fatal("response has no choices".into()))?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| TransportFailure::Fatal("first choice has no message content".into()))?;
    let finish_reason = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .unwrap_or("unknown");
    Ok(TransportReply {
        content: content.to_string(),
        finish_reason: finish_reason.to_string(),
        latency: Duration::ZERO,
    })
}

impl Transport for LiveTransport {
    fn send(&self, request: &ChatRequest) -> Result<TransportReply, TransportFailure> {
        let _permit = self.throttle.acquire();
        let started = Instant::now();
        let resp = self
            .http
            .post(&self.config.endpoint)
            .bearer_auth(&self.config.api_key)
            .json(&request.wire_body())
            .send()
            .map_err(|e| TransportFailure::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| TransportFailure::Transient(e.to_string()))?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(TransportFailure::Auth(format!("HTTP {status}")));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(TransportFailure::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(TransportFailure::Fatal(format!("HTTP {status}: {snippet}")));
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| TransportFailure::Fatal(format!("response is not JSON: {e}")))?;
        let mut reply = parse_completion(&body)?;
        reply.latency = started.elapsed();
        Ok(reply)
    }

    fn name(&self) -> &str {
        "live"
    }
}
