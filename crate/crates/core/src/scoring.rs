//! Escalation metrics computed from recorded actions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentTurn;
use crate::num::{int_mean, Real};
use crate::orchestrator::SimulationRun;
use crate::taxonomy::{ActionCategory, ActionTaxonomy, TaxonomyError};
use crate::world::ChosenAction;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("run {run} is not completed ({status})")]
    IncompleteRun { run: String, status: String },
    #[error("runs mix scenarios: `{0}` and `{1}`")]
    MixedScenario(String, String),
    #[error("no runs to score")]
    EmptyRuns,
    #[error("unknown aggregator `{0}`")]
    UnknownAggregator(String),
}

/// Sum of the scores of `actions`.
pub fn action_list_score(taxonomy: &ActionTaxonomy, actions: &[ChosenAction]) -> Result<i64, TaxonomyError> {
    actions
        .iter()
        .map(|a| taxonomy.lookup(&a.action_id).map(|s| s.score))
        .sum()
}

/// Per-nation score for one day.
pub fn daily_score(turns: &[AgentTurn], taxonomy: &ActionTaxonomy) -> Result<BTreeMap<String, i64>, TaxonomyError> {
    let mut out = BTreeMap::new();
    for t in turns {
        *out.entry(t.nation.clone()).or_insert(0) += action_list_score(taxonomy, &t.actions)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// Mean of the daily scores.
    #[default]
    MeanDaily,
    /// Sum of the daily scores (the running sum at the last day).
    Day14Cumulative,
}

impl Aggregator {
    pub fn key(self) -> &'static str {
        match self {
            Aggregator::MeanDaily => "mean_daily",
            Aggregator::Day14Cumulative => "day14_cumulative",
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Aggregator {
    type Err = ScoringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "mean_daily" | "mean" => Ok(Self::MeanDaily),
            "day14_cumulative" | "cumulative" => Ok(Self::Day14Cumulative),
            _ => Err(ScoringError::UnknownAggregator(s.to_string())),
        }
    }
}

/// One nation's daily scores over a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreSeries {
    pub nation: String,
    pub daily: Vec<i64>,
}

impl ScoreSeries {
    pub fn cumulative(&self) -> Vec<i64> {
        self.daily
            .iter()
            .scan(0, |acc, x| {
                *acc += x;
                Some(*acc)
            })
            .collect()
    }

    pub fn final_cumulative(&self) -> i64 {
        self.daily.iter().sum()
    }

    pub fn mean_daily<T: Real>(&self) -> T {
        int_mean(&self.daily).unwrap_or_else(T::zero)
    }

    pub fn aggregate<T: Real>(&self, aggregator: Aggregator) -> T {
        match aggregator {
            Aggregator::MeanDaily => self.mean_daily(),
            Aggregator::Day14Cumulative => T::from_i64_exact(self.final_cumulative()),
        }
    }
}

fn require_completed(run: &SimulationRun) -> Result<(), ScoringError> {
    if run.status.is_completed() {
        Ok(())
    } else {
        Err(ScoringError::IncompleteRun {
            run: run.run_id(),
            status: run.status.to_string(),
        })
    }
}

/// Daily score series for every nation, in scenario order.
pub fn score_series(run: &SimulationRun) -> Result<Vec<ScoreSeries>, ScoringError> {
    require_completed(run)?;
    Ok(run
        .nations
        .iter()
        .map(|n| ScoreSeries {
            nation: n.clone(),
            daily: run
                .days
                .iter()
                .map(|d| d.daily_score_by_nation.get(n).copied().unwrap_or(0))
                .collect(),
        })
        .collect())
}

pub fn run_score<T: Real>(run: &SimulationRun, aggregator: Aggregator) -> Result<BTreeMap<String, T>, ScoringError> {
    Ok(score_series(run)?
        .into_iter()
        .map(|s| {
            let v = s.aggregate(aggregator);
            (s.nation, v)
        })
        .collect())
}

/// The run's score as one number: the mean over nations of the per-nation
/// aggregate.
pub fn run_level_score<T: Real>(run: &SimulationRun, aggregator: Aggregator) -> Result<T, ScoringError> {
    let series = score_series(run)?;
    if series.is_empty() {
        return Ok(T::zero());
    }
    let total = series
        .iter()
        .fold(T::zero(), |acc, s| acc + s.aggregate::<T>(aggregator));
    Ok(total / T::from_usize_exact(series.len()))
}

/// Mean score per nation for each day of a run.
pub fn daily_nation_means<T: Real>(run: &SimulationRun) -> Result<Vec<T>, ScoringError> {
    require_completed(run)?;
    Ok(run
        .days
        .iter()
        .map(|d| {
            let per_nation: Vec<i64> = run
                .nations
                .iter()
                .map(|n| d.daily_score_by_nation.get(n).copied().unwrap_or(0))
                .collect();
            int_mean(&per_nation).unwrap_or_else(T::zero)
        })
        .collect())
}

/// Actions per nation per run, by category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryCounts<T> {
    pub counts: BTreeMap<ActionCategory, T>,
    pub total_actions: u64,
    pub nations: usize,
    pub runs: usize,
}

impl<T: Real> CategoryCounts<T> {
    pub fn get(&self, category: ActionCategory) -> T {
        self.counts.get(&category).copied().unwrap_or_else(T::zero)
    }
}

pub fn category_frequencies<T: Real>(
    runs: &[SimulationRun],
    taxonomy: &ActionTaxonomy,
) -> Result<CategoryCounts<T>, ScoringError> {
    let first = runs.first().ok_or(ScoringError::EmptyRuns)?;
    let mut raw: BTreeMap<ActionCategory, u64> = ActionCategory::ALL.iter().map(|c| (*c, 0)).collect();
    let mut total = 0u64;
    for run in runs {
        require_completed(run)?;
        if run.scenario_name != first.scenario_name || run.nations != first.nations {
            return Err(ScoringError::MixedScenario(
                first.scenario_name.clone(),
                run.scenario_name.clone(),
            ));
        }
        for day in &run.days {
            for actions in day.actions_by_nation.values() {
                for a in actions {
                    *raw.entry(taxonomy.lookup(&a.action_id)?.category).or_insert(0) += 1;
                    total += 1;
                }
            }
        }
    }
    let denom = T::from_usize_exact(first.nations.len() * runs.len());
    Ok(CategoryCounts {
        counts: raw
            .into_iter()
            .map(|(c, n)| (c, T::from_u64(n).expect("count representable") / denom))
            .collect(),
        total_actions: total,
        nations: first.nations.len(),
        runs: runs.len(),
    })
}
