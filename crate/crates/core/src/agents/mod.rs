//! Nation-agent policies and the parse/retry/fallback loop that turns a policy
//! reply into a validated [`AgentTurn`].

mod parse;
pub mod scripted;
pub mod synthetic;

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::llm::{ChatRequest, ChatResponse, LlmClient, LlmError, Message, RequestKind, RequestTag};
use crate::prompts::{PromptBundle, PromptVariant};
use crate::taxonomy::ActionTaxonomy;
use crate::world::{ChosenAction, Scenario, WorldState};

pub use parse::{parse_agent_response, ParseFailure};
pub use scripted::{ScriptedPolicy, ScriptedTable};
pub use synthetic::SyntheticResponder;

pub const DEFAULT_MAX_PARSE_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub nation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub private_thoughts: Option<String>,
    pub actions: Vec<ChosenAction>,
    pub parse_attempts: u32,
    #[serde(default)]
    pub fallback: bool,
    /// A reflection variant was active but the response carried no thoughts.
    #[serde(default)]
    pub thoughts_missing: bool,
}

impl AgentTurn {
    pub fn fallback(nation: &str, taxonomy: &ActionTaxonomy, parse_attempts: u32) -> Self {
        Self {
            nation: nation.to_string(),
            private_thoughts: None,
            actions: vec![ChosenAction::new(taxonomy.fallback().id.clone(), None)],
            parse_attempts,
            fallback: true,
            thoughts_missing: false,
        }
    }
}

/// Everything a policy may look at when choosing a nation's actions.
pub struct DecisionContext<'a> {
    pub scenario: &'a Scenario,
    pub taxonomy: &'a ActionTaxonomy,
    pub world: &'a WorldState<'a>,
    pub nation: &'a str,
    pub variant: PromptVariant,
    pub prompts: &'a PromptBundle,
    pub temperature: f64,
    pub run_id: &'a str,
    pub seed: u64,
}

impl DecisionContext<'_> {
    pub fn day(&self) -> u32 {
        self.world.current_day + 1
    }
}

pub enum PolicyReply {
    /// Raw model text that still has to be parsed.
    Text { request_tag: String, response: ChatResponse },
    /// Already-structured decision (scripted and replay policies).
    Decided {
        actions: Vec<ChosenAction>,
        private_thoughts: Option<String>,
    },
}

pub trait AgentPolicy: Send + Sync {
    fn query(&self, ctx: &DecisionContext<'_>, attempt: u32) -> Result<PolicyReply, LlmError>;

    fn name(&self) -> &str;

    /// Requests issued so far through this policy's client, if it has one.
    fn requests_issued(&self) -> u64 {
        0
    }
}

/// Queries a chat model with the nation's prompt bundle.
pub struct LlmPolicy {
    client: LlmClient,
    model: String,
    max_tokens: u32,
}

impl LlmPolicy {
    pub fn new(client: LlmClient, model: impl Into<String>, max_tokens: u32) -> Self {
        Self {
            client,
            model: model.into(),
            max_tokens,
        }
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }
}

impl AgentPolicy for LlmPolicy {
    fn query(&self, ctx: &DecisionContext<'_>, attempt: u32) -> Result<PolicyReply, LlmError> {
        let tag = RequestTag {
            run_id: ctx.run_id.to_string(),
            seed: ctx.seed,
            day: ctx.day(),
            nation: Some(ctx.nation.to_string()),
            kind: RequestKind::Action,
            attempt,
        }
        .to_string();
        let request = ChatRequest {
            model: self.model.clone(),
            messages: vec![
                Message::system(ctx.prompts.system_text.clone()),
                Message::user(ctx.prompts.user_text.clone()),
            ],
            temperature: ctx.temperature,
            max_tokens: self.max_tokens,
            request_tag: tag.clone(),
        };
        let response = self.client.complete(&request)?;
        Ok(PolicyReply::Text {
            request_tag: tag,
            response,
        })
    }

    fn name(&self) -> &str {
        "llm"
    }

    fn requests_issued(&self) -> u64 {
        self.client.requests_issued()
    }
}

/// Re-plays decisions recorded in an earlier transcript.
pub struct ReplayPolicy {
    turns: HashMap<(String, u32), AgentTurn>,
}

impl ReplayPolicy {
    pub fn new(turns: HashMap<(String, u32), AgentTurn>) -> Self {
        Self { turns }
    }
}

impl AgentPolicy for ReplayPolicy {
    fn query(&self, ctx: &DecisionContext<'_>, _attempt: u32) -> Result<PolicyReply, LlmError> {
        let turn = self
            .turns
            .get(&(ctx.nation.to_string(), ctx.day()))
            .ok_or_else(|| LlmError::Transport {
                tag: format!("replay:{}:day{}", ctx.nation, ctx.day()),
                attempts: 1,
                message: "no recorded turn".into(),
            })?;
        Ok(PolicyReply::Decided {
            actions: turn.actions.clone(),
            private_thoughts: turn.private_thoughts.clone(),
        })
    }

    fn name(&self) -> &str {
        "replay"
    }
}

/// One query/parse cycle, kept for the transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
    #[serde(default)]
    pub transport_attempts: u32,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<ParseFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnOutcome {
    pub turn: AgentTurn,
    pub attempts: Vec<AttemptLog>,
}

fn millis(d: Duration) -> u64 {
    d.as_millis().min(u64::MAX as u128) as u64
}

/// Asks `policy` for a turn, re-asking up to `max_parse_retries` times on
/// unparseable output and falling back to the taxonomy's status-quo action.
pub fn decide_with_retry(
    policy: &dyn AgentPolicy,
    ctx: &DecisionContext<'_>,
    max_parse_retries: u32,
) -> Result<TurnOutcome, LlmError> {
    let mut attempts = Vec::new();
    for attempt in 1..=max_parse_retries + 1 {
        match policy.query(ctx, attempt)? {
            PolicyReply::Decided {
                actions,
                private_thoughts,
            } => {
                let thoughts_missing = ctx.prompts.expects_private_thoughts && private_thoughts.is_none();
                attempts.push(AttemptLog {
                    attempt,
                    request_tag: None,
                    content: None,
                    finish_reason: None,
                    transport_attempts: 0,
                    latency_ms: 0,
                    failure: None,
                });
                return Ok(TurnOutcome {
                    turn: AgentTurn {
                        nation: ctx.nation.to_string(),
                        private_thoughts,
                        actions,
                        parse_attempts: attempt,
                        fallback: false,
                        thoughts_missing,
                    },
                    attempts,
                });
            }
            PolicyReply::Text {
                request_tag,
                response,
            } => {
                let parsed = parse_agent_response(
                    &response.content,
                    ctx.taxonomy,
                    ctx.scenario,
                    ctx.nation,
                    ctx.prompts.expects_private_thoughts,
                );
                let mut log = AttemptLog {
                    attempt,
                    request_tag: Some(request_tag),
                    content: Some(response.content),
                    finish_reason: Some(response.finish_reason),
                    transport_attempts: response.attempt_count,
                    latency_ms: millis(response.latency),
                    failure: None,
                };
                match parsed {
                    Ok(mut turn) => {
                        attempts.push(log);
                        turn.parse_attempts = attempt;
                        return Ok(TurnOutcome { turn, attempts });
                    }
                    Err(failure) => {
                        tracing::debug!(nation = ctx.nation, attempt, %failure, "unusable agent response");
                        log.failure = Some(failure);
                        attempts.push(log);
                    }
                }
            }
        }
    }
    Ok(TurnOutcome {
        turn: AgentTurn::fallback(ctx.nation, ctx.taxonomy, max_parse_retries + 1),
        attempts,
    })
}
