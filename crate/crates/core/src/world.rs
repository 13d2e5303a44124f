//! Scenario definition and the evolving day-by-day world state.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::ActionTaxonomy;

pub const DEFAULT_DAYS: u32 = 14;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("unknown nation `{0}`")]
    UnknownNation(String),
    #[error("day sequence error: world is at day {current}, record is for day {got}")]
    Sequence { current: u32, got: u32 },
    #[error("incomplete day record: {0}")]
    IncompleteRecord(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NationProfile {
    pub name: String,
    pub background: String,
    #[serde(default)]
    pub objectives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub days: u32,
    pub initial_summary: String,
    pub nations: Vec<NationProfile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default = "default_days")]
    days: u32,
    initial_summary: String,
    nations: Vec<NationProfile>,
}

fn default_days() -> u32 {
    DEFAULT_DAYS
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = ScenarioFile::deserialize(d)?;
        Scenario::new(f.name, f.days, f.initial_summary, f.nations).map_err(serde::de::Error::custom)
    }
}

impl Scenario {
    pub fn new(
        name: impl Into<String>,
        days: u32,
        initial_summary: impl Into<String>,
        nations: Vec<NationProfile>,
    ) -> Result<Self, ScenarioError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(ScenarioError::Validation("scenario name is empty".into()));
        }
        if days < 1 {
            return Err(ScenarioError::Validation("days must be at least 1".into()));
        }
        if nations.is_empty() {
            return Err(ScenarioError::Validation("scenario has no nations".into()));
        }
        let mut seen = HashSet::new();
        for n in &nations {
            if n.name.trim().is_empty() {
                return Err(ScenarioError::Validation("nation with empty name".into()));
            }
            if !seen.insert(n.name.as_str()) {
                return Err(ScenarioError::Validation(format!("duplicate nation `{}`", n.name)));
            }
        }
        Ok(Self {
            name,
            days,
            initial_summary: initial_summary.into().trim().to_string(),
            nations,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let f: ScenarioFile =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.message().to_string()))?;
        Self::new(f.name, f.days, f.initial_summary, f.nations)
    }

    pub fn nation(&self, name: &str) -> Result<&NationProfile, ScenarioError> {
        self.nations
            .iter()
            .find(|n| n.name == name)
            .ok_or_else(|| ScenarioError::UnknownNation(name.to_string()))
    }

    pub fn has_nation(&self, name: &str) -> bool {
        self.nations.iter().any(|n| n.name == name)
    }

    pub fn nation_names(&self) -> impl Iterator<Item = &str> {
        self.nations.iter().map(|n| n.name.as_str())
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_toml_str(&text)
}

/// One action picked by a nation on a given day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChosenAction {
    pub action_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub raw_text: String,
}

impl ChosenAction {
    pub fn new(action_id: impl Into<String>, target: Option<&str>) -> Self {
        let action_id = action_id.into();
        let raw_text = match target {
            Some(t) => format!("{action_id} -> {t}"),
            None => action_id.clone(),
        };
        Self {
            action_id,
            target: target.map(str::to_string),
            raw_text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub day: u32,
    pub actions_by_nation: BTreeMap<String, Vec<ChosenAction>>,
    pub daily_score_by_nation: BTreeMap<String, i64>,
    pub world_summary_after: String,
}

impl DailyRecord {
    /// Checks that every nation has an entry and that stored scores equal the
    /// recomputed action-score sums.
    pub fn check(&self, scenario: &Scenario, taxonomy: &ActionTaxonomy) -> Result<(), ScenarioError> {
        for nation in scenario.nation_names() {
            let actions = self
                .actions_by_nation
                .get(nation)
                .ok_or_else(|| ScenarioError::IncompleteRecord(format!("no actions for {nation}")))?;
            let mut sum = 0;
            for a in actions {
                sum += taxonomy
                    .lookup(&a.action_id)
                    .map_err(|e| ScenarioError::IncompleteRecord(e.to_string()))?
                    .score;
            }
            let stored = self
                .daily_score_by_nation
                .get(nation)
                .ok_or_else(|| ScenarioError::IncompleteRecord(format!("no score for {nation}")))?;
            if *stored != sum {
                return Err(ScenarioError::IncompleteRecord(format!(
                    "{nation}: stored score {stored} != recomputed {sum}"
                )));
            }
        }
        if self.actions_by_nation.len() != scenario.nations.len() {
            return Err(ScenarioError::IncompleteRecord(
                "record names nations outside the scenario".into(),
            ));
        }
        Ok(())
    }
}

/// Immutable snapshot of the game at the end of `current_day`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState<'s> {
    pub scenario: &'s Scenario,
    pub current_day: u32,
    pub summary: String,
    pub history: Vec<DailyRecord>,
}

impl<'s> WorldState<'s> {
    pub fn initial(scenario: &'s Scenario) -> Self {
        Self {
            scenario,
            current_day: 0,
            summary: scenario.initial_summary.clone(),
            history: Vec::new(),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.current_day >= self.scenario.days
    }

    /// Returns the next state; `self` is left untouched.
    pub fn advance_day(&self, record: DailyRecord) -> Result<WorldState<'s>, ScenarioError> {
        if record.day != self.current_day + 1 {
            return Err(ScenarioError::Sequence {
                current: self.current_day,
                got: record.day,
            });
        }
        if record.day > self.scenario.days {
            return Err(ScenarioError::Sequence {
                current: self.current_day,
                got: record.day,
            });
        }
        for nation in self.scenario.nation_names() {
            if !record.actions_by_nation.contains_key(nation) {
                return Err(ScenarioError::IncompleteRecord(format!(
                    "day {} has no entry for {nation}",
                    record.day
                )));
            }
        }
        let mut history = self.history.clone();
        let summary = record.world_summary_after.clone();
        history.push(record);
        Ok(WorldState {
            scenario: self.scenario,
            current_day: self.current_day + 1,
            summary,
            history,
        })
    }

    /// Rebuilds the state reached by applying `records` in order from day 0.
    pub fn replay(scenario: &'s Scenario, records: &[DailyRecord]) -> Result<Self, ScenarioError> {
        records
            .iter()
            .try_fold(Self::initial(scenario), |w, r| w.advance_day(r.clone()))
    }
}

pub fn advance_day<'s>(world: &WorldState<'s>, record: DailyRecord) -> Result<WorldState<'s>, ScenarioError> {
    world.advance_day(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_scenario(nations: usize, days: u32) -> Scenario {
        let nations = (0..nations)
            .map(|i| NationProfile {
                name: format!("Nation{}", (b'A' + i as u8) as char),
                background: "bg".into(),
                objectives: vec!["survive".into()],
            })
            .collect();
        Scenario::new("test", days, "calm", nations).unwrap()
    }

    fn record(scenario: &Scenario, day: u32) -> DailyRecord {
        let mut actions = BTreeMap::new();
        let mut scores = BTreeMap::new();
        for n in scenario.nation_names() {
            actions.insert(n.to_string(), vec![ChosenAction::new("wait", None)]);
            scores.insert(n.to_string(), 0);
        }
        DailyRecord {
            day,
            actions_by_nation: actions,
            daily_score_by_nation: scores,
            world_summary_after: format!("after day {day}"),
        }
    }

    #[test]
    fn shipped_neutral_scenario() {
        let s = crate::defaults::scenario();
        assert_eq!(s.name, "neutral");
        assert_eq!(s.nations.len(), 8);
        assert_eq!(s.days, 14);
    }

    #[test]
    fn small_variant_and_duplicates() {
        let ok = Scenario::from_toml_str(
            r#"
name = "tiny"
days = 3
initial_summary = "quiet"
[[nations]]
name = "A"
background = "a"
objectives = ["x"]
[[nations]]
name = "B"
background = "b"
"#,
        )
        .unwrap();
        assert_eq!((ok.nations.len(), ok.days), (2, 3));

        let dup = Scenario::from_toml_str(
            r#"
name = "dup"
initial_summary = "quiet"
[[nations]]
name = "A"
background = "a"
[[nations]]
name = "A"
background = "b"
"#,
        );
        assert!(matches!(dup, Err(ScenarioError::Validation(_))));
        let zero = Scenario::new("z", 0, "s", small_scenario(1, 1).nations);
        assert!(matches!(zero, Err(ScenarioError::Validation(_))));
    }

    #[test]
    fn advance_rules() {
        let s = small_scenario(8, 14);
        let w0 = WorldState::initial(&s);
        assert_eq!(w0.summary, s.initial_summary);
        let w1 = w0.advance_day(record(&s, 1)).unwrap();
        assert_eq!((w1.current_day, w1.history.len()), (1, 1));
        assert_eq!(w0.current_day, 0);
        assert!(w0.history.is_empty());

        let mut w = w1;
        for d in 2..=5 {
            w = w.advance_day(record(&s, d)).unwrap();
        }
        assert!(matches!(
            w.advance_day(record(&s, 7)),
            Err(ScenarioError::Sequence { current: 5, got: 7 })
        ));
        for d in 6..=14 {
            w = w.advance_day(record(&s, d)).unwrap();
        }
        assert_eq!((w.current_day, w.history.len()), (14, 14));
        assert!(w.is_finished());
        assert!(w.advance_day(record(&s, 15)).is_err());
    }

    #[test]
    fn incomplete_record_rejected() {
        let s = small_scenario(3, 2);
        let mut r = record(&s, 1);
        r.actions_by_nation.remove("NationB");
        assert!(matches!(
            WorldState::initial(&s).advance_day(r),
            Err(ScenarioError::IncompleteRecord(_))
        ));
    }

    proptest! {
        #[test]
        fn history_is_append_only_and_replayable(days in 1u32..10, nations in 1usize..5) {
            let s = small_scenario(nations, days);
            let mut w = WorldState::initial(&s);
            let mut snapshots = Vec::new();
            for d in 1..=days {
                let next = w.advance_day(record(&s, d)).unwrap();
                prop_assert_eq!(&next.history[..w.history.len()], &w.history[..]);
                snapshots.push(w);
                w = next;
            }
            let replayed = WorldState::replay(&s, &w.history).unwrap();
            prop_assert_eq!(&replayed, &w);
            prop_assert_eq!(snapshots.len() as u32, days);
        }
    }
}
