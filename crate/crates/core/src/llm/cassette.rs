//! Record/replay of chat exchanges.
//!
//! A cassette is a JSON-lines file; each line holds one exchange:
//! `{"request_tag", "body_sha256", "request", "response": {"content", "finish_reason"}}`.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::transport::{Transport, TransportFailure};
use super::types::{ChatRequest, TransportReply};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub request_tag: String,
    pub body_sha256: String,
    pub request: Value,
    pub response: TransportReply,
}

pub fn read_cassette(path: impl AsRef<Path>) -> std::io::Result<Vec<CassetteRecord>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("cassette line {}: {e}", i + 1),
            )
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Tag and request body must both match a recorded exchange.
    #[default]
    Strict,
    /// Match by tag alone, then by body hash.
    Fuzzy,
}

/// Serves recorded exchanges. Duplicate keys are served in recording order.
pub struct ReplayTransport {
    mode: MatchMode,
    by_exact: Mutex<HashMap<(String, String), VecDeque<TransportReply>>>,
    by_tag: Mutex<HashMap<String, VecDeque<TransportReply>>>,
    by_hash: Mutex<HashMap<String, VecDeque<TransportReply>>>,
}

impl ReplayTransport {
    pub fn new(records: Vec<CassetteRecord>, mode: MatchMode) -> Self {
        let mut exact: HashMap<_, VecDeque<_>> = HashMap::new();
        let mut tag: HashMap<_, VecDeque<_>> = HashMap::new();
        let mut hash: HashMap<_, VecDeque<_>> = HashMap::new();
        for r in records {
            exact
                .entry((r.request_tag.clone(), r.body_sha256.clone()))
                .or_default()
                .push_back(r.response.clone());
            tag.entry(r.request_tag.clone())
                .or_default()
                .push_back(r.response.clone());
            hash.entry(r.body_sha256).or_default().push_back(r.response);
        }
        Self {
            mode,
            by_exact: Mutex::new(exact),
            by_tag: Mutex::new(tag),
            by_hash: Mutex::new(hash),
        }
    }

    pub fn open(path: impl AsRef<Path>, mode: MatchMode) -> std::io::Result<Self> {
        Ok(Self::new(read_cassette(path)?, mode))
    }

    pub fn open_many<P: AsRef<Path>>(paths: &[P], mode: MatchMode) -> std::io::Result<Self> {
        let mut all = Vec::new();
        for p in paths {
            all.extend(read_cassette(p)?);
        }
        Ok(Self::new(all, mode))
    }
}

fn take<K: std::hash::Hash + Eq>(
    map: &Mutex<HashMap<K, VecDeque<TransportReply>>>,
    key: &K,
) -> Option<TransportReply> {
    let mut m = map.lock().expect("cassette lock");
    let q = m.get_mut(key)?;
    // The last remaining reply for a key is reused so that identical repeated
    // requests keep working after the recorded copies run out.
    if q.len() > 1 {
        q.pop_front()
    } else {
        q.front().cloned()
    }
}

impl Transport for ReplayTransport {
    fn send(&self, request: &ChatRequest) -> Result<TransportReply, TransportFailure> {
        let hash = request.body_sha256();
        let hit = match self.mode {
            MatchMode::Strict => take(&self.by_exact, &(request.request_tag.clone(), hash)),
            MatchMode::Fuzzy => take(&self.by_tag, &request.request_tag).or_else(|| take(&self.by_hash, &hash)),
        };
        hit.ok_or_else(|| {
            TransportFailure::Fatal(format!("no cassette entry for request `{}`", request.request_tag))
        })
    }

    fn name(&self) -> &str {
        "replay"
    }
}

/// Forwards to an inner transport and appends every successful exchange to a
/// cassette file.
pub struct RecordingTransport<T: Transport> {
    inner: T,
    out: Mutex<File>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, path: impl AsRef<Path>) -> std::io::Result<Self> {
        let out = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner,
            out: Mutex::new(out),
        })
    }

    pub fn into_inner(self) -> T {
        self.inner
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, request: &ChatRequest) -> Result<TransportReply, TransportFailure> {
        let reply = self.inner.send(request)?;
        let record = CassetteRecord {
            request_tag: request.request_tag.clone(),
            body_sha256: request.body_sha256(),
            request: request.wire_body(),
            response: reply.clone(),
        };
        let mut line = serde_json::to_string(&record).expect("cassette record serializes");
        line.push('\n');
        let mut out = self.out.lock().expect("cassette writer");
        out.write_all(line.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| TransportFailure::Fatal(format!("cassette write: {e}")))?;
        Ok(reply)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::mock::MockTransport;
    use crate::llm::types::Message;

    fn req(tag: &str, user: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![Message::system("s"), Message::user(user)],
            temperature: 1.0,
            max_tokens: 8,
            request_tag: tag.into(),
        }
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let rec = RecordingTransport::new(
            MockTransport::new(|r| Ok(TransportReply::text(format!("echo {}", r.request_tag)))),
            &path,
        )
        .unwrap();
        rec.send(&req("a", "one")).unwrap();
        rec.send(&req("b", "two")).unwrap();
        drop(rec);

        let strict = ReplayTransport::open(&path, MatchMode::Strict).unwrap();
        assert_eq!(strict.send(&req("b", "two")).unwrap().content, "echo b");
        assert_eq!(strict.send(&req("a", "one")).unwrap().content, "echo a");
        let miss = strict.send(&req("a", "changed")).unwrap_err();
        assert!(matches!(miss, TransportFailure::Fatal(ref m) if m.contains("`a`")));
        assert!(strict.send(&req("zzz", "one")).is_err());

        let fuzzy = ReplayTransport::open(&path, MatchMode::Fuzzy).unwrap();
        assert_eq!(fuzzy.send(&req("a", "changed")).unwrap().content, "echo a");
        assert_eq!(fuzzy.send(&req("other", "two")).unwrap().content, "echo b");
        assert!(fuzzy.send(&req("other", "nope")).is_err());
    }

    #[test]
    fn duplicate_keys_served_in_order() {
        let r = req("t", "x");
        let records = ["first", "second"]
            .iter()
            .map(|c| CassetteRecord {
                request_tag: "t".into(),
                body_sha256: r.body_sha256(),
                request: r.wire_body(),
                response: TransportReply::text(*c),
            })
            .collect();
        let replay = ReplayTransport::new(records, MatchMode::Strict);
        assert_eq!(replay.send(&r).unwrap().content, "first");
        assert_eq!(replay.send(&r).unwrap().content, "second");
        assert_eq!(replay.send(&r).unwrap().content, "second");
    }
}
