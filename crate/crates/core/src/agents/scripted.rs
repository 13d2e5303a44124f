//! Fixed day-by-day action tables.
//!
//! File format (TOML):
//!
//! ```toml
//! default = ["wait"]                      # any nation, any unlisted day
//! private_thoughts = "optional text"      # emitted when the prompt asks for it
//!
//! [nations.Purple]
//! default = ["military_posturing"]        # this nation, unlisted days
//!
//! [nations.Purple.days]
//! 1 = ["publicly_criticize:Red", "wait"]  # `id` or `id:Target`
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::llm::{ChatRequest, LlmError, RequestKind, RequestTag, Role, TransportFailure, TransportReply};
use crate::taxonomy::ActionTaxonomy;
use crate::world::{ChosenAction, Scenario};

use super::{AgentPolicy, DecisionContext, PolicyReply};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed script: {0}")]
    Parse(String),
    #[error("invalid script entry for {nation} day {day}: {reason}")]
    Validation { nation: String, day: u32, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NationScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub days: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedTable {
    #[serde(default)]
    pub default: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub private_thoughts: Option<String>,
    #[serde(default)]
    pub nations: BTreeMap<String, NationScript>,
}

fn split_entry(entry: &str) -> (&str, Option<&str>) {
    match entry.split_once(':') {
        Some((id, target)) => (id.trim(), Some(target.trim())),
        None => (entry.trim(), None),
    }
}

impl ScriptedTable {
    /// Every nation plays `actions` every day.
    pub fn uniform(actions: &[&str]) -> Self {
        Self {
            default: actions.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScriptError> {
        let table: Self = toml::from_str(text).map_err(|e| ScriptError::Parse(e.message().to_string()))?;
        for (nation, script) in &table.nations {
            for key in script.days.keys() {
                key.parse::<u32>().map_err(|_| {
                    ScriptError::Parse(format!("{nation}: day key `{key}` is not a number"))
                })?;
            }
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("script serializes")
    }

    fn entries(&self, nation: &str, day: u32) -> &[String] {
        let script = self.nations.get(nation);
        script
            .and_then(|s| s.days.get(&day.to_string()))
            .or_else(|| script.and_then(|s| s.default.as_ref()))
            .unwrap_or(&self.default)
    }

    /// The scripted actions for `nation` on `day`; a pure function of both.
    pub fn actions_for(&self, nation: &str, day: u32) -> Vec<ChosenAction> {
        self.entries(nation, day)
            .iter()
            .map(|e| {
                let (id, target) = split_entry(e);
                ChosenAction::new(id, target)
            })
            .collect()
    }

    /// The scripted day rendered as an agent response document.
    pub fn response_document(&self, nation: &str, day: u32, with_thoughts: bool) -> String {
        let actions: Vec<_> = self
            .entries(nation, day)
            .iter()
            .map(|e| match split_entry(e) {
                (id, Some(t)) => json!({"action": id, "target": t}),
                (id, None) => json!({"action": id}),
            })
            .collect();
        let doc = match (&self.private_thoughts, with_thoughts) {
            (Some(t), true) => json!({"private_thoughts": t, "actions": actions}),
            _ => json!({"actions": actions}),
        };
        doc.to_string()
    }

    /// Checks every entry that a game of `scenario.days` days can reach.
    pub fn validate(&self, taxonomy: &ActionTaxonomy, scenario: &Scenario) -> Result<(), ScriptError> {
        for nation in self.nations.keys() {
            if !scenario.has_nation(nation) {
                return Err(ScriptError::Validation {
                    nation: nation.clone(),
                    day: 0,
                    reason: "not a nation in this scenario".into(),
                });
            }
        }
        for nation in scenario.nation_names() {
            for day in 1..=scenario.days {
                let fail = |reason: String| ScriptError::Validation {
                    nation: nation.to_string(),
                    day,
                    reason,
                };
                let entries = self.entries(nation, day);
                if entries.len() > crate::prompts::MAX_ACTIONS_PER_DAY {
                    return Err(fail(format!("{} actions exceeds the daily cap", entries.len())));
                }
                for e in entries {
                    let (id, target) = split_entry(e);
                    let spec = taxonomy.lookup(id).map_err(|e| fail(e.to_string()))?;
                    match (spec.requires_target, target) {
                        (true, None) => return Err(fail(format!("`{id}` needs a target"))),
                        (false, Some(_)) => return Err(fail(format!("`{id}` takes no target"))),
                        (true, Some(t)) if t == nation || !scenario.has_nation(t) => {
                            return Err(fail(format!("bad target `{t}`")))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }
}

/// Plays a [`ScriptedTable`] directly, without any model.
pub struct ScriptedPolicy {
    table: ScriptedTable,
}

impl ScriptedPolicy {
    pub fn new(table: ScriptedTable) -> Self {
        Self { table }
    }
}

impl AgentPolicy for ScriptedPolicy {
    fn query(&self, ctx: &DecisionContext<'_>, _attempt: u32) -> Result<PolicyReply, LlmError> {
        let mut actions = self.table.actions_for(ctx.nation, ctx.day());
        if actions.is_empty() {
            actions.push(ChosenAction::new(ctx.taxonomy.fallback().id.clone(), None));
        }
        let private_thoughts = if ctx.prompts.expects_private_thoughts {
            self.table.private_thoughts.clone()
        } else {
            None
        };
        Ok(PolicyReply::Decided {
            actions,
            private_thoughts,
        })
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Lines of the form `- ...` from the last user message, used to echo the
/// day's actions back as a deterministic world summary.
pub(crate) fn echoed_action_lines(request: &ChatRequest) -> Vec<String> {
    request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| {
            let after = m
                .content
                .split_once("## Actions taken on day")
                .map(|(_, rest)| rest)
                .unwrap_or(&m.content);
            after
                .lines()
                .filter(|l| l.starts_with("- "))
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

pub(crate) fn world_echo(day: u32, request: &ChatRequest) -> String {
    let mut out = vec![format!("State of the world at the end of day {day}.")];
    out.extend(echoed_action_lines(request));
    out.join("\n")
}

/// Mock-transport responder that answers action queries from a scripted
/// table and world-update queries with an echo of the day's actions.
pub fn scripted_responder(
    table: Arc<ScriptedTable>,
) -> impl Fn(&ChatRequest) -> Result<TransportReply, TransportFailure> + Send + Sync + 'static {
    move |request| {
        let tag: RequestTag = request
            .request_tag
            .parse()
            .map_err(|e: LlmError| TransportFailure::Fatal(e.to_string()))?;
        match tag.kind {
            RequestKind::Action => {
                let nation = tag
                    .nation
                    .as_deref()
                    .ok_or_else(|| TransportFailure::Fatal("action request without nation".into()))?;
                let wants_thoughts = request
                    .messages
                    .first()
                    .is_some_and(|m| m.content.contains("\"private_thoughts\":"));
                Ok(TransportReply::text(table.response_document(nation, tag.day, wants_thoughts)))
            }
            RequestKind::World => Ok(TransportReply::text(world_echo(tag.day, request))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defaults;

    const SCRIPT: &str = r#"
default = ["wait"]
private_thoughts = "hold steady"

[nations.Purple]
default = ["military_posturing"]

[nations.Purple.days]
1 = ["start_peace_negotiations:Red", "execute_nuclear_strike:Blue"]
"#;

    #[test]
    fn lookup_precedence() {
        let t = ScriptedTable::from_toml_str(SCRIPT).unwrap();
        let d1 = t.actions_for("Purple", 1);
        assert_eq!(d1.len(), 2);
        assert_eq!(d1[0].target.as_deref(), Some("Red"));
        assert_eq!(t.actions_for("Purple", 2)[0].action_id, "military_posturing");
        assert_eq!(t.actions_for("Blue", 1)[0].action_id, "wait");
        assert_eq!(t.actions_for("Purple", 1), t.actions_for("Purple", 1));
        t.validate(&defaults::taxonomy(), &defaults::scenario()).unwrap();
    }

    #[test]
    fn validation_errors() {
        let taxonomy = defaults::taxonomy();
        let scenario = defaults::scenario();
        for bad in [
            r#"default = ["execute_targeted_attack"]"#,
            r#"default = ["wait:Red"]"#,
            r#"default = ["fly_to_moon"]"#,
            "[nations.Purple]\ndefault = [\"form_alliance:Purple\"]",
            "[nations.Atlantis]\ndefault = [\"wait\"]",
            r#"default = ["wait", "wait", "wait", "wait", "wait", "wait"]"#,
        ] {
            let t = ScriptedTable::from_toml_str(bad).unwrap();
            assert!(t.validate(&taxonomy, &scenario).is_err(), "{bad}");
        }
        assert!(ScriptedTable::from_toml_str("[nations.A.days]\nx = [\"wait\"]").is_err());
        assert!(ScriptedTable::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn response_document_round_trips_through_parser() {
        let t = ScriptedTable::from_toml_str(SCRIPT).unwrap();
        let doc = t.response_document("Purple", 1, true);
        let turn = crate::agents::parse_agent_response(
            &doc,
            &defaults::taxonomy(),
            &defaults::scenario(),
            "Purple",
            true,
        )
        .unwrap();
        assert_eq!(turn.private_thoughts.as_deref(), Some("hold steady"));
        let ids: Vec<_> = turn.actions.iter().map(|a| a.action_id.as_str()).collect();
        assert_eq!(ids, ["start_peace_negotiations", "execute_nuclear_strike"]);
        assert!(!t.response_document("Purple", 1, false).contains("private_thoughts"));
    }

    #[test]
    fn toml_round_trip() {
        let t = ScriptedTable::from_toml_str(SCRIPT).unwrap();
        assert_eq!(ScriptedTable::from_toml_str(&t.to_toml_string()).unwrap(), t);
    }
}
