//! Extraction and validation of agent response documents from untrusted model
//! output.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::prompts::{word_count, MAX_ACTIONS_PER_DAY, PRIVATE_THOUGHTS_WORD_LIMIT};
use crate::taxonomy::ActionTaxonomy;
use crate::world::{ChosenAction, Scenario};

use super::AgentTurn;

/// Machine-readable reason a response could not be used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum ParseFailure {
    NoDocument,
    Schema(String),
    EmptyActions,
    TooManyActions(usize),
    UnknownAction(String),
    MissingTarget(String),
    UnexpectedTarget(String),
    BadTarget(String),
    SelfTarget(String),
}

impl ParseFailure {
    pub fn code(&self) -> &'static str {
        match self {
            ParseFailure::NoDocument => "no_document",
            ParseFailure::Schema(_) => "schema",
            ParseFailure::EmptyActions => "empty_actions",
            ParseFailure::TooManyActions(_) => "too_many_actions",
            ParseFailure::UnknownAction(_) => "unknown_action",
            ParseFailure::MissingTarget(_) => "missing_target",
            ParseFailure::UnexpectedTarget(_) => "unexpected_target",
            ParseFailure::BadTarget(_) => "bad_target",
            ParseFailure::SelfTarget(_) => "self_target",
        }
    }
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseFailure::NoDocument => write!(f, "no response document found"),
            ParseFailure::Schema(m) => write!(f, "schema violation: {m}"),
            ParseFailure::EmptyActions => write!(f, "actions list is empty"),
            ParseFailure::TooManyActions(n) => {
                write!(f, "{n} actions exceeds the daily cap of {MAX_ACTIONS_PER_DAY}")
            }
            ParseFailure::UnknownAction(id) => write!(f, "unknown action `{id}`"),
            ParseFailure::MissingTarget(id) => write!(f, "action `{id}` requires a target"),
            ParseFailure::UnexpectedTarget(id) => write!(f, "action `{id}` takes no target"),
            ParseFailure::BadTarget(t) => write!(f, "target `{t}` is not a nation in this scenario"),
            ParseFailure::SelfTarget(t) => write!(f, "`{t}` cannot target itself"),
        }
    }
}

impl std::error::Error for ParseFailure {}

/// First JSON object in `content` that has an `actions` key.
fn locate_document(content: &str) -> Option<Map<String, Value>> {
    for (i, _) in content.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&content[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            if map.contains_key("actions") {
                return Some(map);
            }
        }
    }
    None
}

fn resolve_target(scenario: &Scenario, raw: &str) -> Option<String> {
    let raw = raw.trim();
    scenario
        .nation_names()
        .find(|n| *n == raw)
        .or_else(|| scenario.nation_names().find(|n| n.eq_ignore_ascii_case(raw)))
        .map(str::to_string)
}

/// Parses one agent response. `parse_attempts` on the result is 1.
pub fn parse_agent_response(
    content: &str,
    taxonomy: &ActionTaxonomy,
    scenario: &Scenario,
    nation: &str,
    expects_private_thoughts: bool,
) -> Result<AgentTurn, ParseFailure> {
    let doc = locate_document(content).ok_or(ParseFailure::NoDocument)?;

    let private_thoughts = match doc.get("private_thoughts") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.trim().is_empty() => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(ParseFailure::Schema("private_thoughts must be a string".into())),
    };

    let items = match &doc["actions"] {
        Value::Array(items) => items,
        _ => return Err(ParseFailure::Schema("actions must be an array".into())),
    };
    if items.is_empty() {
        return Err(ParseFailure::EmptyActions);
    }
    if items.len() > MAX_ACTIONS_PER_DAY {
        return Err(ParseFailure::TooManyActions(items.len()));
    }

    let mut actions = Vec::with_capacity(items.len());
    for item in items {
        let obj = item
            .as_object()
            .ok_or_else(|| ParseFailure::Schema("each action must be an object".into()))?;
        let id = obj
            .get("action")
            .and_then(Value::as_str)
            .ok_or_else(|| ParseFailure::Schema("action entry lacks a string `action`".into()))?
            .trim();
        let spec = taxonomy
            .lookup(id)
            .map_err(|_| ParseFailure::UnknownAction(id.to_string()))?;
        let target = match obj.get("target") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if s.trim().is_empty() => None,
            Some(Value::String(s)) => Some(s.as_str()),
            Some(_) => return Err(ParseFailure::Schema("target must be a string".into())),
        };
        let target = match (spec.requires_target, target) {
            (true, None) => return Err(ParseFailure::MissingTarget(spec.id.clone())),
            (false, Some(_)) => return Err(ParseFailure::UnexpectedTarget(spec.id.clone())),
            (false, None) => None,
            (true, Some(raw)) => {
                let t = resolve_target(scenario, raw)
                    .ok_or_else(|| ParseFailure::BadTarget(raw.to_string()))?;
                if t == nation {
                    return Err(ParseFailure::SelfTarget(t));
                }
                Some(t)
            }
        };
        actions.push(ChosenAction {
            action_id: spec.id.clone(),
            target,
            raw_text: item.to_string(),
        });
    }

    let thoughts_missing = expects_private_thoughts && private_thoughts.is_none();
    if thoughts_missing {
        tracing::warn!(nation, "reflection variant response has no private thoughts");
    }
    if let Some(t) = &private_thoughts {
        let words = word_count(t);
        if words > PRIVATE_THOUGHTS_WORD_LIMIT {
            tracing::warn!(nation, words, "private thoughts exceed the instructed word limit");
        }
    }

    Ok(AgentTurn {
        nation: nation.to_string(),
        private_thoughts,
        actions,
        parse_attempts: 1,
        fallback: false,
        thoughts_missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defaults;
    use crate::taxonomy::ActionCategory;
    use crate::world::NationProfile;
    use proptest::prelude::*;

    fn scenario() -> Scenario {
        let nations = ["NationA", "NationB", "NationC"]
            .iter()
            .map(|n| NationProfile {
                name: n.to_string(),
                background: String::new(),
                objectives: vec![],
            })
            .collect();
        Scenario::new("t", 3, "s", nations).unwrap()
    }

    fn parse(content: &str, reflect: bool) -> Result<AgentTurn, ParseFailure> {
        parse_agent_response(content, &defaults::taxonomy(), &scenario(), "NationA", reflect)
    }

    #[test]
    fn wait_document() {
        let t = parse(r#"{"actions":[{"action":"wait"}]}"#, false).unwrap();
        assert_eq!(t.actions.len(), 1);
        let spec = defaults::taxonomy().lookup(&t.actions[0].action_id).unwrap().clone();
        assert_eq!((spec.category, spec.score), (ActionCategory::StatusQuo, 0));
        assert!(!t.thoughts_missing);
    }

    #[test]
    fn tolerates_surrounding_prose_and_fences() {
        let content = "Sure! Here is my answer:\n```json\n{\"private_thoughts\": \"stay calm\", \"actions\": [{\"action\": \"start_peace_negotiations\", \"target\": \"nationb\"}]}\n```\nThanks {not json}";
        let t = parse(content, true).unwrap();
        assert_eq!(t.private_thoughts.as_deref(), Some("stay calm"));
        assert_eq!(t.actions[0].target.as_deref(), Some("NationB"));
        assert!(t.actions[0].raw_text.contains("start_peace_negotiations"));
    }

    #[test]
    fn skips_objects_without_actions() {
        let t = parse(r#"{"note": 1} then {"actions":[{"action":"wait"}]}"#, false).unwrap();
        assert_eq!(t.actions[0].action_id, "wait");
    }

    #[test]
    fn failure_reasons() {
        assert_eq!(parse("I refuse to answer.", false), Err(ParseFailure::NoDocument));
        assert_eq!(
            parse(r#"{"actions":[{"action":"execute_targeted_attack","target":"NationA"}]}"#, false),
            Err(ParseFailure::SelfTarget("NationA".into()))
        );
        assert_eq!(
            parse(r#"{"actions":[{"action":"launch_everything"}]}"#, false),
            Err(ParseFailure::UnknownAction("launch_everything".into()))
        );
        assert_eq!(
            parse(r#"{"actions":[{"action":"execute_targeted_attack"}]}"#, false),
            Err(ParseFailure::MissingTarget("execute_targeted_attack".into()))
        );
        assert_eq!(
            parse(r#"{"actions":[{"action":"wait","target":"NationB"}]}"#, false),
            Err(ParseFailure::UnexpectedTarget("wait".into()))
        );
        assert_eq!(
            parse(r#"{"actions":[{"action":"form_alliance","target":"Atlantis"}]}"#, false),
            Err(ParseFailure::BadTarget("Atlantis".into()))
        );
        assert_eq!(parse(r#"{"actions":[]}"#, false), Err(ParseFailure::EmptyActions));
        let six = format!("{{\"actions\":[{}]}}", vec![r#"{"action":"wait"}"#; 6].join(","));
        assert_eq!(parse(&six, false), Err(ParseFailure::TooManyActions(6)));
        assert!(matches!(parse(r#"{"actions":"wait"}"#, false), Err(ParseFailure::Schema(_))));
        assert!(matches!(
            parse(r#"{"actions":[{"action":"wait"}],"private_thoughts":3}"#, false),
            Err(ParseFailure::Schema(_))
        ));
    }

    #[test]
    fn missing_thoughts_is_a_deviation_not_an_error() {
        let t = parse(r#"{"actions":[{"action":"wait"}]}"#, true).unwrap();
        assert!(t.thoughts_missing);
        assert!(t.private_thoughts.is_none());
    }

    fn mutate(doc: &str, pos: usize, op: u8, byte: u8) -> String {
        let mut bytes = doc.as_bytes().to_vec();
        let pos = pos % (bytes.len() + 1);
        match op % 3 {
            0 if pos < bytes.len() => {
                bytes.remove(pos);
            }
            1 => bytes.insert(pos, byte),
            _ if pos < bytes.len() => bytes[pos] = byte,
            _ => bytes.push(byte),
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    proptest! {
        #[test]
        fn mutated_documents_parse_valid_or_fail_cleanly(
            edits in proptest::collection::vec((any::<usize>(), any::<u8>(), 0x20u8..0x7f), 1..6)
        ) {
            let taxonomy = defaults::taxonomy();
            let scen = scenario();
            let mut doc = r#"{"private_thoughts":"x","actions":[{"action":"execute_targeted_attack","target":"NationB"},{"action":"wait"},{"action":"form_alliance","target":"NationC"}]}"#.to_string();
            for (pos, op, byte) in edits {
                doc = mutate(&doc, pos, op, byte);
            }
            if let Ok(turn) = parse_agent_response(&doc, &taxonomy, &scen, "NationA", true) {
                prop_assert!(!turn.actions.is_empty() && turn.actions.len() <= MAX_ACTIONS_PER_DAY);
                for a in &turn.actions {
                    let spec = taxonomy.lookup(&a.action_id);
                    prop_assert!(spec.is_ok());
                    let spec = spec.unwrap();
                    prop_assert_eq!(spec.requires_target, a.target.is_some());
                    if let Some(t) = &a.target {
                        prop_assert!(scen.has_nation(t));
                        prop_assert_ne!(t.as_str(), "NationA");
                    }
                }
            }
        }
    }
}
