use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde_json::Value;

use super::transport::{Transport, TransportFailure};
use super::types::{ChatRequest, TransportReply};

type Responder = dyn Fn(&ChatRequest) -> Result<TransportReply, TransportFailure> + Send + Sync;

/// A captured request as the mock saw it.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedRequest {
    pub request_tag: String,
    pub body: Value,
}

/// In-process transport driven by a responder closure. Every request body is
/// captured and counted.
pub struct MockTransport {
    responder: Box<Responder>,
    captured: Mutex<Vec<CapturedRequest>>,
    capture_bodies: bool,
    count: AtomicU64,
}

impl MockTransport {
    pub fn new<F>(responder: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<TransportReply, TransportFailure> + Send + Sync + 'static,
    {
        Self {
            responder: Box::new(responder),
            captured: Mutex::new(Vec::new()),
            capture_bodies: true,
            count: AtomicU64::new(0),
        }
    }

    /// Always answers with `text`.
    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_| Ok(TransportReply::text(text.clone())))
    }

    /// Plays `replies` in order, then fails every further request.
    pub fn sequence(replies: Vec<Result<TransportReply, TransportFailure>>) -> Self {
        let queue = Mutex::new(VecDeque::from(replies));
        Self::new(move |_| {
            queue
                .lock()
                .expect("mock queue")
                .pop_front()
                .unwrap_or_else(|| Err(TransportFailure::Fatal("mock script exhausted".into())))
        })
    }

    /// Keep only the request count, not the bodies (large experiments).
    pub fn without_capture(mut self) -> Self {
        self.capture_bodies = false;
        self
    }

    pub fn request_count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }

    pub fn captured(&self) -> Vec<CapturedRequest> {
        self.captured.lock().expect("mock capture").clone()
    }
}

impl Transport for MockTransport {
    fn send(&self, request: &ChatRequest) -> Result<TransportReply, TransportFailure> {
        self.count.fetch_add(1, Ordering::SeqCst);
        if self.capture_bodies {
            self.captured.lock().expect("mock capture").push(CapturedRequest {
                request_tag: request.request_tag.clone(),
                body: request.wire_body(),
            });
        }
        (self.responder)(request)
    }

    fn name(&self) -> &str {
        "mock"
    }
}
