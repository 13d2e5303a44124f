//! The escalation action menu: every action a nation agent may choose, with
//! its escalation score and behaviour category.
//!
//! Taxonomies are loaded from TOML files (`version` plus an `actions` array)
//! and validated on load. Unknown keys are rejected.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest escalation score an action may carry.
pub const MIN_SCORE: i64 = -2;
/// Highest escalation score an action may carry (nuclear use).
pub const MAX_SCORE: i64 = 60;
/// Number of actions in the shipped default menu.
pub const DEFAULT_ACTION_COUNT: usize = 27;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed taxonomy: {0}")]
    Parse(String),
    #[error("invalid action `{id}`: {reason}")]
    Validation { id: String, reason: String },
    #[error("taxonomy has no zero-score, untargeted status-quo action to use as fallback")]
    NoFallback,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionCategory {
    DeEscalation,
    StatusQuo,
    Posturing,
    NonViolentEscalation,
    ViolentEscalation,
    Nuclear,
}

impl ActionCategory {
    pub const ALL: [ActionCategory; 6] = [
        ActionCategory::DeEscalation,
        ActionCategory::StatusQuo,
        ActionCategory::Posturing,
        ActionCategory::NonViolentEscalation,
        ActionCategory::ViolentEscalation,
        ActionCategory::Nuclear,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ActionCategory::DeEscalation => "de_escalation",
            ActionCategory::StatusQuo => "status_quo",
            ActionCategory::Posturing => "posturing",
            ActionCategory::NonViolentEscalation => "non_violent_escalation",
            ActionCategory::ViolentEscalation => "violent_escalation",
            ActionCategory::Nuclear => "nuclear",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ActionCategory::DeEscalation => "De-escalation",
            ActionCategory::StatusQuo => "Status quo",
            ActionCategory::Posturing => "Posturing",
            ActionCategory::NonViolentEscalation => "Non-violent escalation",
            ActionCategory::ViolentEscalation => "Violent escalation",
            ActionCategory::Nuclear => "Nuclear",
        }
    }
}

impl fmt::Display for ActionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub id: String,
    #[serde(rename = "name")]
    pub display_name: String,
    pub category: ActionCategory,
    pub score: i64,
    pub requires_target: bool,
}

/// Validated, immutable action menu.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionTaxonomy {
    version: String,
    actions: Vec<ActionSpec>,
    fallback: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyFile {
    version: String,
    actions: Vec<ActionSpec>,
}

#[derive(Serialize)]
struct TaxonomyFileRef<'a> {
    version: &'a str,
    actions: &'a [ActionSpec],
}

impl Serialize for ActionTaxonomy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TaxonomyFileRef {
            version: &self.version,
            actions: &self.actions,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ActionTaxonomy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = TaxonomyFile::deserialize(d)?;
        ActionTaxonomy::new(file.version, file.actions).map_err(serde::de::Error::custom)
    }
}

impl ActionTaxonomy {
    pub fn new(version: impl Into<String>, actions: Vec<ActionSpec>) -> Result<Self, TaxonomyError> {
        let mut seen = HashSet::new();
        for a in &actions {
            let fail = |reason: String| TaxonomyError::Validation {
                id: a.id.clone(),
                reason,
            };
            if a.id.trim().is_empty() {
                return Err(fail("empty id".into()));
            }
            if !seen.insert(a.id.as_str()) {
                return Err(fail("duplicate id".into()));
            }
            if !(MIN_SCORE..=MAX_SCORE).contains(&a.score) {
                return Err(fail(format!(
                    "score {} outside [{MIN_SCORE}, {MAX_SCORE}]",
                    a.score
                )));
            }
            if a.category == ActionCategory::DeEscalation && a.score >= 0 {
                return Err(fail(format!(
                    "de-escalation action must have a negative score, got {}",
                    a.score
                )));
            }
            if a.category == ActionCategory::Nuclear && a.score != MAX_SCORE {
                return Err(fail(format!(
                    "nuclear action must score {MAX_SCORE}, got {}",
                    a.score
                )));
            }
        }
        let fallback = actions
            .iter()
            .position(|a| a.category == ActionCategory::StatusQuo && a.score == 0 && !a.requires_target)
            .ok_or(TaxonomyError::NoFallback)?;
        if actions.len() != DEFAULT_ACTION_COUNT {
            tracing::warn!(
                count = actions.len(),
                "taxonomy does not have the standard {DEFAULT_ACTION_COUNT} actions"
            );
        }
        Ok(Self {
            version: version.into(),
            actions,
            fallback,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile =
            toml::from_str(text).map_err(|e| TaxonomyError::Parse(e.message().to_string()))?;
        Self::new(file.version, file.actions)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("taxonomy serializes")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn actions(&self) -> &[ActionSpec] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// The zero-score status-quo action substituted for malformed responses.
    pub fn fallback(&self) -> &ActionSpec {
        &self.actions[self.fallback]
    }

    pub fn lookup(&self, id: &str) -> Result<&ActionSpec, TaxonomyError> {
        self.actions
            .iter()
            .find(|a| a.id == id)
            .ok_or_else(|| TaxonomyError::UnknownAction(id.to_string()))
    }

    pub fn score_range(&self) -> (i64, i64) {
        let min = self.actions.iter().map(|a| a.score).min().unwrap_or(0);
        let max = self.actions.iter().map(|a| a.score).max().unwrap_or(0);
        (min, max)
    }

    pub fn category_counts(&self) -> Vec<(ActionCategory, usize)> {
        ActionCategory::ALL
            .iter()
            .map(|&c| (c, self.actions.iter().filter(|a| a.category == c).count()))
            .collect()
    }
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<ActionTaxonomy, TaxonomyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ActionTaxonomy::from_toml_str(&text)
}

pub fn lookup_action<'a>(taxonomy: &'a ActionTaxonomy, id: &str) -> Result<&'a ActionSpec, TaxonomyError> {
    taxonomy.lookup(id)
}
