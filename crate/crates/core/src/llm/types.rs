use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::LlmError;

pub const DEFAULT_MODEL: &str = "open-mistral-7b";
pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const MAX_TEMPERATURE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Correlates the request with transcript events; never sent on the wire.
    pub request_tag: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=MAX_TEMPERATURE).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, {MAX_TEMPERATURE}]",
                self.temperature
            )));
        }
        match self.messages.first() {
            None => return Err(LlmError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::System => {
                return Err(LlmError::InvalidRequest("first message must be the system prompt".into()))
            }
            _ => {}
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// OpenAI-compatible chat-completions body.
    pub fn wire_body(&self) -> Value {
        json!({
            "model": self.model,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }

    pub fn body_sha256(&self) -> String {
        crate::prompts::sha256_hex(&self.wire_body().to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: String,
    pub latency: Duration,
    pub attempt_count: u32,
}

/// What a transport hands back for one successful HTTP exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportReply {
    pub content: String,
    pub finish_reason: String,
    #[serde(skip)]
    pub latency: Duration,
}

impl TransportReply {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            finish_reason: "stop".into(),
            latency: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Action,
    World,
}

/// Structured form of `request_tag`:
/// `run=<id>;seed=<n>;day=<d>;nation=<name>;kind=<action|world>;attempt=<k>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RequestTag {
    pub run_id: String,
    pub seed: u64,
    pub day: u32,
    pub nation: Option<String>,
    pub kind: RequestKind,
    pub attempt: u32,
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            RequestKind::Action => "action",
            RequestKind::World => "world",
        };
        write!(
            f,
            "run={};seed={};day={};nation={};kind={kind};attempt={}",
            self.run_id,
            self.seed,
            self.day,
            self.nation.as_deref().unwrap_or("-"),
            self.attempt
        )
    }
}

impl FromStr for RequestTag {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LlmError::InvalidRequest(format!("malformed request tag `{s}`"));
        let mut run_id = None;
        let mut seed = None;
        let mut day = None;
        let mut nation = None;
        let mut kind = None;
        let mut attempt = None;
        for part in s.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            match k {
                "run" => run_id = Some(v.to_string()),
                "seed" => seed = Some(v.parse().map_err(|_| bad())?),
                "day" => day = Some(v.parse().map_err(|_| bad())?),
                "nation" => nation = Some((v != "-").then(|| v.to_string())),
                "kind" => {
                    kind = Some(match v {
                        "action" => RequestKind::Action,
                        "world" => RequestKind::World,
                        _ => return Err(bad()),
                    })
                }
                "attempt" => attempt = Some(v.parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        Ok(Self {
            run_id: run_id.ok_or_else(bad)?,
            seed: seed.ok_or_else(bad)?,
            day: day.ok_or_else(bad)?,
            nation: nation.ok_or_else(bad)?,
            kind: kind.ok_or_else(bad)?,
            attempt: attempt.ok_or_else(bad)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(temperature: f64) -> ChatRequest {
        ChatRequest {
            model: DEFAULT_MODEL.into(),
            messages: vec![Message::system("sys"), Message::user("hi")],
            temperature,
            max_tokens: DEFAULT_MAX_TOKENS,
            request_tag: "t".into(),
        }
    }

    #[test]
    fn validation() {
        request(0.0).validate().unwrap();
        request(2.0).validate().unwrap();
        assert!(request(2.01).validate().is_err());
        assert!(request(-0.1).validate().is_err());
        let mut r = request(1.0);
        r.messages.remove(0);
        assert!(r.validate().is_err());
        r.messages.clear();
        assert!(r.validate().is_err());
    }

    #[test]
    fn body_carries_temperature_verbatim() {
        for t in [0.01, 0.5, 1.0] {
            let body = request(t).wire_body();
            assert_eq!(body["temperature"].as_f64(), Some(t));
            assert!(body.get("request_tag").is_none());
            assert_eq!(body["messages"][0]["role"], "system");
        }
        assert!(request(0.01).wire_body().to_string().contains("\"temperature\":0.01"));
    }

    #[test]
    fn tag_round_trip() {
        let tag = RequestTag {
            run_id: "t1.0-default-s7".into(),
            seed: 7,
            day: 3,
            nation: Some("Purple".into()),
            kind: RequestKind::Action,
            attempt: 2,
        };
        assert_eq!(tag.to_string().parse::<RequestTag>().unwrap(), tag);
        let world = RequestTag {
            nation: None,
            kind: RequestKind::World,
            ..tag
        };
        assert_eq!(world.to_string().parse::<RequestTag>().unwrap(), world);
        assert!("run=x".parse::<RequestTag>().is_err());
    }
}
