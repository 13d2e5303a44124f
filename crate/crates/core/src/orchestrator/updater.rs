//! End-of-day world-model updates.

use crate::agents::AttemptLog;
use crate::llm::{ChatRequest, LlmClient, LlmError, Message, RequestKind, RequestTag};
use crate::prompts::{describe_action, PromptBuilder};
use crate::taxonomy::ActionTaxonomy;
use crate::world::{ChosenAction, WorldState};

pub struct UpdateContext<'a> {
    pub world: &'a WorldState<'a>,
    pub taxonomy: &'a ActionTaxonomy,
    /// Each nation's actions for the day, in scenario order.
    pub day_actions: &'a [(String, Vec<ChosenAction>)],
    pub prompts: &'a PromptBuilder,
    pub temperature: f64,
    pub run_id: &'a str,
    pub seed: u64,
}

impl UpdateContext<'_> {
    pub fn day(&self) -> u32 {
        self.world.current_day + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateOutcome {
    pub summary: String,
    pub exchange: Option<AttemptLog>,
}

pub trait WorldUpdater: Send + Sync {
    fn update(&self, ctx: &UpdateContext<'_>) -> Result<UpdateOutcome, LlmError>;

    fn name(&self) -> &str;

    fn requests_issued(&self) -> u64 {
        0
    }
}

/// Deterministic summary: a header quoting the first line of the previous
/// summary, then one `- Nation: action` line per action.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateUpdater;

impl TemplateUpdater {
    pub fn render(ctx: &UpdateContext<'_>) -> String {
        let previous = ctx.world.summary.lines().next().unwrap_or("").trim();
        let mut out = vec![format!(
            "State of the world at the end of day {}. Previous summary began: \"{previous}\"",
            ctx.day()
        )];
        for (nation, actions) in ctx.day_actions {
            for a in actions {
                out.push(format!("- {nation}: {}", describe_action(ctx.taxonomy, a)));
            }
        }
        out.join("\n")
    }
}

impl WorldUpdater for TemplateUpdater {
    fn update(&self, ctx: &UpdateContext<'_>) -> Result<UpdateOutcome, LlmError> {
        Ok(UpdateOutcome {
            summary: Self::render(ctx),
            exchange: None,
        })
    }

    fn name(&self) -> &str {
        "template"
    }
}

/// Asks a chat model to rewrite the world summary, at the treatment
/// temperature.
pub struct LlmUpdater {
    client: LlmClient,
    model: String,
    max_tokens: u32,
}

impl LlmUpdater {
    pub fn new(client: LlmClient, model: impl Into<String>, max_tokens: u32) -> Self {
        Self {
            client,
            model: model.into(),
            max_tokens,
        }
    }
}

impl WorldUpdater for LlmUpdater {
    fn update(&self, ctx: &UpdateContext<'_>) -> Result<UpdateOutcome, LlmError> {
        let (system, user) = ctx
            .prompts
            .world_update(ctx.world, ctx.taxonomy, ctx.day_actions)
            .map_err(|e| LlmError::InvalidRequest(e.to_string()))?;
        let tag = RequestTag {
            run_id: ctx.run_id.to_string(),
            seed: ctx.seed,
            day: ctx.day(),
            nation: None,
            kind: RequestKind::World,
            attempt: 1,
        }
        .to_string();
        let request = ChatRequest {
            model: self.model.clone(),
            messages: vec![Message::system(system), Message::user(user)],
            temperature: ctx.temperature,
            max_tokens: self.max_tokens,
            request_tag: tag.clone(),
        };
        let response = self.client.complete(&request)?;
        let text = response.content.trim();
        let summary = if text.is_empty() {
            tracing::warn!(day = ctx.day(), "world model returned an empty summary, using template");
            TemplateUpdater::render(ctx)
        } else {
            text.to_string()
        };
        Ok(UpdateOutcome {
            summary,
            exchange: Some(AttemptLog {
                attempt: 1,
                request_tag: Some(tag),
                content: Some(response.content),
                finish_reason: Some(response.finish_reason),
                transport_attempts: response.attempt_count,
                latency_ms: response.latency.as_millis().min(u64::MAX as u128) as u64,
                failure: None,
            }),
        })
    }

    fn name(&self) -> &str {
        "llm"
    }

    fn requests_issued(&self) -> u64 {
        self.client.requests_issued()
    }
}

pub fn update_world(updater: &dyn WorldUpdater, ctx: &UpdateContext<'_>) -> Result<String, LlmError> {
    updater.update(ctx).map(|o| o.summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defaults;
    use crate::llm::MockTransport;
    use std::sync::Arc;

    fn one_action_each(world: &WorldState<'_>) -> Vec<(String, Vec<ChosenAction>)> {
        world
            .scenario
            .nation_names()
            .map(|n| (n.to_string(), vec![ChosenAction::new("wait", None)]))
            .collect()
    }

    #[test]
    fn template_lists_each_action_and_is_pure() {
        let scenario = defaults::scenario();
        let taxonomy = defaults::taxonomy();
        let world = WorldState::initial(&scenario);
        let actions = one_action_each(&world);
        let builder = PromptBuilder::default();
        let ctx = UpdateContext {
            world: &world,
            taxonomy: &taxonomy,
            day_actions: &actions,
            prompts: &builder,
            temperature: 1.0,
            run_id: "r",
            seed: 1,
        };
        let a = update_world(&TemplateUpdater, &ctx).unwrap();
        let b = update_world(&TemplateUpdater, &ctx).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lines().filter(|l| l.starts_with("- ")).count(), 8);
        assert!(a.starts_with("State of the world at the end of day 1."));
    }

    #[test]
    fn llm_updater_echoes_model_text() {
        let scenario = defaults::scenario();
        let taxonomy = defaults::taxonomy();
        let world = WorldState::initial(&scenario);
        let actions = one_action_each(&world);
        let builder = PromptBuilder::default();
        let mock = Arc::new(MockTransport::fixed("tensions rose"));
        let updater = LlmUpdater::new(LlmClient::new(mock.clone()), "m", 512);
        let ctx = UpdateContext {
            world: &world,
            taxonomy: &taxonomy,
            day_actions: &actions,
            prompts: &builder,
            temperature: 0.5,
            run_id: "r",
            seed: 1,
        };
        let out = updater.update(&ctx).unwrap();
        assert_eq!(out.summary, "tensions rose");
        assert!(out.exchange.unwrap().request_tag.unwrap().contains("kind=world"));
        let body = &mock.captured()[0].body;
        assert_eq!(body["temperature"].as_f64(), Some(0.5));
        assert!(body["messages"][1]["content"].as_str().unwrap().contains("- Purple: Wait"));

        let empty = LlmUpdater::new(LlmClient::new(Arc::new(MockTransport::fixed("  "))), "m", 512);
        assert!(!empty.update(&ctx).unwrap().summary.is_empty());
    }
}
