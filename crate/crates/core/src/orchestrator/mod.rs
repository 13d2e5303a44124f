//! One seeded game: query every nation each day, score the day, update the
//! world model, and log everything to a resumable transcript.

pub mod transcript;
mod updater;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{decide_with_retry, AgentPolicy, AgentTurn, DecisionContext, DEFAULT_MAX_PARSE_RETRIES};
use crate::llm::MAX_TEMPERATURE;
use crate::prompts::{sha256_hex, PromptBuilder, PromptError, PromptVariant};
use crate::scoring;
use crate::taxonomy::{ActionTaxonomy, TaxonomyError};
use crate::world::{ChosenAction, DailyRecord, Scenario, ScenarioError, WorldState};

use transcript::{read_records, Clock, Event, Record, TranscriptWriter};

pub use updater::{update_world, LlmUpdater, TemplateUpdater, UpdateContext, UpdateOutcome, WorldUpdater};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("invalid treatment: {0}")]
    Treatment(String),
    #[error("transcript {path}: {reason}")]
    Transcript { path: String, reason: String },
}

impl SimulationError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    fn transcript(path: &Path, reason: impl Into<String>) -> Self {
        Self::Transcript {
            path: path.display().to_string(),
            reason: reason.into(),
        }
    }
}

/// An experimental condition: sampling temperature plus prompt variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Treatment {
    pub label: String,
    pub temperature: f64,
    #[serde(default = "default_variant")]
    pub variant: PromptVariant,
}

fn default_variant() -> PromptVariant {
    PromptVariant::Default
}

impl Treatment {
    pub fn new(label: impl Into<String>, temperature: f64, variant: PromptVariant) -> Result<Self, SimulationError> {
        let t = Self {
            label: label.into(),
            temperature,
            variant,
        };
        t.validate()?;
        Ok(t)
    }

    /// `t<temperature>-<variant>`, e.g. `t1.0-default`.
    pub fn default_label(temperature: f64, variant: PromptVariant) -> String {
        format!("t{temperature:?}-{}", variant.key().replace('_', "-"))
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if !(0.0..=MAX_TEMPERATURE).contains(&self.temperature) {
            return Err(SimulationError::Treatment(format!(
                "{}: temperature {} outside [0, {MAX_TEMPERATURE}]",
                self.label, self.temperature
            )));
        }
        let ok = !self.label.is_empty()
            && self
                .label
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_'));
        if !ok {
            return Err(SimulationError::Treatment(format!(
                "label `{}` must be nonempty and use only [A-Za-z0-9._-]",
                self.label
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { reason: String },
    /// Stopped before the last day without a terminal record (resumable).
    Incomplete,
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunStatus::Completed => f.write_str("completed"),
            RunStatus::Aborted { reason } => write!(f, "aborted: {reason}"),
            RunStatus::Incomplete => f.write_str("incomplete"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub treatment: Treatment,
    pub seed: u64,
    pub scenario_name: String,
    pub nations: Vec<String>,
    pub days: Vec<DailyRecord>,
    pub status: RunStatus,
    pub transcript_path: PathBuf,
    /// Chat requests sent over the wire, including transport retries.
    pub requests: u64,
}

impl SimulationRun {
    pub fn run_id(&self) -> String {
        run_id(&self.treatment, self.seed)
    }
}

pub fn run_id(treatment: &Treatment, seed: u64) -> String {
    format!("{}-seed{seed}", treatment.label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    /// Every nation sees only the start-of-day world.
    #[default]
    Simultaneous,
    /// Nations also see actions already taken today by nations before them.
    Sequential,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub max_parse_retries: u32,
    pub visibility: Visibility,
    pub clock: Clock,
    /// Continue an existing transcript from its last complete day.
    pub resume: bool,
    /// Stop after this day without writing a terminal record.
    pub halt_after_day: Option<u32>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_parse_retries: DEFAULT_MAX_PARSE_RETRIES,
            visibility: Visibility::Simultaneous,
            clock: Clock::Wall,
            resume: false,
            halt_after_day: None,
        }
    }
}

/// Fixed inputs of one run.
pub struct RunSetup<'a> {
    pub scenario: &'a Scenario,
    pub taxonomy: &'a ActionTaxonomy,
    pub prompts: &'a PromptBuilder,
    pub treatment: &'a Treatment,
    pub seed: u64,
    pub transcript_path: &'a Path,
}

/// What a transcript says about its run.
#[derive(Debug, Clone)]
pub struct TranscriptState {
    pub treatment: Treatment,
    pub seed: u64,
    pub scenario_name: String,
    pub nations: Vec<String>,
    pub planned_days: u32,
    pub taxonomy: ActionTaxonomy,
    pub system_sha256: String,
    pub days: Vec<DailyRecord>,
    pub status: Option<RunStatus>,
    pub requests: u64,
    /// Byte offset and next sequence number just after the last complete day
    /// (or after the run header when no day is complete).
    pub resume_point: (u64, u64),
}

#[derive(Default)]
struct DayAccumulator {
    actions: BTreeMap<String, Vec<ChosenAction>>,
    scores: Option<BTreeMap<String, i64>>,
    summary: Option<String>,
    requests: u64,
}

/// Rebuilds the run recorded in a transcript, checking each stored score
/// against the taxonomy it was played with.
pub fn read_transcript(path: &Path) -> Result<TranscriptState, SimulationError> {
    let records = read_records(path)?;
    let mut iter = records.into_iter();
    let (first, first_end) = iter
        .next()
        .ok_or_else(|| SimulationError::transcript(path, "empty transcript"))?;
    let Record {
        seq: first_seq,
        event:
            Event::RunStart {
                treatment,
                seed,
                scenario,
                days: planned_days,
                nations,
                taxonomy,
                system_sha256,
                ..
            },
        ..
    } = first
    else {
        return Err(SimulationError::transcript(path, "first record is not run_start"));
    };
    let mut state = TranscriptState {
        treatment,
        seed,
        scenario_name: scenario,
        nations,
        planned_days,
        taxonomy,
        system_sha256,
        days: Vec::new(),
        status: None,
        requests: 0,
        resume_point: (first_end, first_seq + 1),
    };
    let mut acc = DayAccumulator::default();
    for (record, end) in iter {
        match record.event {
            Event::RunStart { .. } => return Err(SimulationError::transcript(path, "repeated run_start")),
            Event::Response { transport_attempts, .. } => acc.requests += u64::from(transport_attempts),
            Event::Turn { turn, score } => {
                let recomputed = scoring::action_list_score(&state.taxonomy, &turn.actions)?;
                if recomputed != score {
                    return Err(SimulationError::transcript(
                        path,
                        format!(
                            "day {} {}: stored score {score} != recomputed {recomputed}",
                            record.day, turn.nation
                        ),
                    ));
                }
                acc.actions.insert(turn.nation, turn.actions);
            }
            Event::Score { scores } => acc.scores = Some(scores),
            Event::Summary { text } => acc.summary = Some(text),
            Event::DayEnd => {
                let done = std::mem::take(&mut acc);
                let expected = state.days.len() as u32 + 1;
                if record.day != expected {
                    return Err(SimulationError::transcript(
                        path,
                        format!("day_end for day {} where day {expected} was expected", record.day),
                    ));
                }
                let (Some(scores), Some(summary)) = (done.scores, done.summary) else {
                    return Err(SimulationError::transcript(
                        path,
                        format!("day {} ends without scores or summary", record.day),
                    ));
                };
                if done.actions.len() != state.nations.len() {
                    return Err(SimulationError::transcript(
                        path,
                        format!("day {} has turns for {} nations", record.day, done.actions.len()),
                    ));
                }
                state.requests += done.requests;
                state.days.push(DailyRecord {
                    day: record.day,
                    actions_by_nation: done.actions,
                    daily_score_by_nation: scores,
                    world_summary_after: summary,
                });
                state.resume_point = (end, record.seq + 1);
            }
            Event::RunEnd { status } => {
                state.requests += acc.requests;
                acc.requests = 0;
                state.status = Some(status);
            }
            Event::Prompt { .. } | Event::Parse { .. } => {}
        }
    }
    Ok(state)
}

/// Loads a finished (or partial) run from its transcript.
pub fn load_run(path: &Path) -> Result<(SimulationRun, ActionTaxonomy), SimulationError> {
    let state = read_transcript(path)?;
    let status = state.status.unwrap_or(RunStatus::Incomplete);
    if status.is_completed() && state.days.len() as u32 != state.planned_days {
        return Err(SimulationError::transcript(
            path,
            format!("completed run has {} of {} days", state.days.len(), state.planned_days),
        ));
    }
    Ok((
        SimulationRun {
            treatment: state.treatment,
            seed: state.seed,
            scenario_name: state.scenario_name,
            nations: state.nations,
            days: state.days,
            status,
            transcript_path: path.to_path_buf(),
            requests: state.requests,
        },
        state.taxonomy,
    ))
}

fn abort(
    out: &mut TranscriptWriter,
    day: u32,
    reason: String,
) -> Result<RunStatus, SimulationError> {
    tracing::error!(day, %reason, "run aborted");
    let status = RunStatus::Aborted { reason };
    out.write(day, None, Event::RunEnd { status: status.clone() })?;
    Ok(status)
}

/// Plays `setup.scenario` to the end (or until aborted) under one treatment.
pub fn run_simulation(
    setup: &RunSetup<'_>,
    policy: &dyn AgentPolicy,
    updater: &dyn WorldUpdater,
    options: &RunOptions,
) -> Result<SimulationRun, SimulationError> {
    setup.treatment.validate()?;
    let RunSetup {
        scenario,
        taxonomy,
        prompts,
        treatment,
        seed,
        transcript_path: path,
    } = *setup;
    let run_id = run_id(treatment, seed);
    let nations: Vec<String> = scenario.nation_names().map(str::to_string).collect();
    let system_prompt = prompts.system_prompt(scenario, taxonomy, treatment.variant)?;
    let system_sha256 = sha256_hex(&system_prompt);

    let mut history = Vec::new();
    let mut requests = 0;
    let mut out = None;
    if options.resume && path.exists() && !read_records(path)?.is_empty() {
        let state = read_transcript(path)?;
        let matches = state.treatment == *treatment
            && state.seed == seed
            && state.scenario_name == scenario.name
            && state.nations == nations
            && state.planned_days == scenario.days
            && state.taxonomy == *taxonomy
            && state.system_sha256 == system_sha256;
        if !matches {
            return Err(SimulationError::transcript(
                path,
                "existing transcript was produced by a different configuration",
            ));
        }
        if state.status == Some(RunStatus::Completed) {
            return Ok(SimulationRun {
                treatment: treatment.clone(),
                seed,
                scenario_name: scenario.name.clone(),
                nations,
                days: state.days,
                status: RunStatus::Completed,
                transcript_path: path.to_path_buf(),
                requests: state.requests,
            });
        }
        let (keep, next_seq) = state.resume_point;
        tracing::info!(path = %path.display(), days_kept = state.days.len(), "resuming run");
        history = state.days;
        requests = state.requests;
        out = Some(TranscriptWriter::resume(path, &run_id, options.clock, keep, next_seq)?);
    }
    let mut out = match out {
        Some(w) => w,
        None => {
            let mut w = TranscriptWriter::create(path, &run_id, options.clock)?;
            w.write(
                0,
                None,
                Event::RunStart {
                    treatment: treatment.clone(),
                    seed,
                    scenario: scenario.name.clone(),
                    days: scenario.days,
                    nations: nations.clone(),
                    policy: policy.name().to_string(),
                    updater: updater.name().to_string(),
                    taxonomy: taxonomy.clone(),
                    system_prompt,
                    system_sha256,
                },
            )?;
            w
        }
    };

    let mut world = WorldState::replay(scenario, &history)?;
    let latency_ms = |ms: u64| if options.clock == Clock::Logical { 0 } else { ms };
    let finish = |days: Vec<DailyRecord>, status: RunStatus, requests: u64| SimulationRun {
        treatment: treatment.clone(),
        seed,
        scenario_name: scenario.name.clone(),
        nations: nations.clone(),
        days,
        status,
        transcript_path: path.to_path_buf(),
        requests,
    };

    while !world.is_finished() {
        let day = world.current_day + 1;
        let mut turns: Vec<AgentTurn> = Vec::with_capacity(nations.len());
        let mut visible: Vec<(String, Vec<ChosenAction>)> = Vec::new();
        for nation in &nations {
            let shown: &[(String, Vec<ChosenAction>)] = match options.visibility {
                Visibility::Simultaneous => &[],
                Visibility::Sequential => &visible,
            };
            let bundle = prompts.build_with_visible(scenario, taxonomy, &world, nation, treatment.variant, shown)?;
            out.write(
                day,
                Some(nation),
                Event::Prompt {
                    user_prompt: bundle.user_text.clone(),
                    digest: bundle.digest(),
                },
            )?;
            let ctx = DecisionContext {
                scenario,
                taxonomy,
                world: &world,
                nation,
                variant: treatment.variant,
                prompts: &bundle,
                temperature: treatment.temperature,
                run_id: &run_id,
                seed,
            };
            let outcome = match decide_with_retry(policy, &ctx, options.max_parse_retries) {
                Ok(o) => o,
                Err(e) => {
                    let status = abort(&mut out, day, format!("{nation}: {e}"))?;
                    return Ok(finish(world.history, status, requests));
                }
            };
            for log in outcome.attempts {
                if let (Some(tag), Some(content)) = (log.request_tag, log.content) {
                    requests += u64::from(log.transport_attempts);
                    out.write(
                        day,
                        Some(nation),
                        Event::Response {
                            attempt: log.attempt,
                            request_tag: tag,
                            content,
                            finish_reason: log.finish_reason.unwrap_or_default(),
                            transport_attempts: log.transport_attempts,
                            latency_ms: latency_ms(log.latency_ms),
                        },
                    )?;
                }
                out.write(
                    day,
                    Some(nation),
                    Event::Parse {
                        attempt: log.attempt,
                        ok: log.failure.is_none(),
                        failure: log.failure,
                    },
                )?;
            }
            let turn = outcome.turn;
            if turn.fallback {
                tracing::warn!(day, nation = %nation, "no usable response, playing fallback action");
            }
            if turn.thoughts_missing {
                tracing::warn!(day, nation = %nation, "reflection variant but no private thoughts");
            }
            let score = scoring::action_list_score(taxonomy, &turn.actions)?;
            out.write(
                day,
                Some(nation),
                Event::Turn {
                    turn: turn.clone(),
                    score,
                },
            )?;
            visible.push((nation.clone(), turn.actions.clone()));
            turns.push(turn);
        }

        let scores = scoring::daily_score(&turns, taxonomy)?;
        out.write(day, None, Event::Score { scores: scores.clone() })?;

        let update_ctx = UpdateContext {
            world: &world,
            taxonomy,
            day_actions: &visible,
            prompts,
            temperature: treatment.temperature,
            run_id: &run_id,
            seed,
        };
        let update = match updater.update(&update_ctx) {
            Ok(u) => u,
            Err(e) => {
                let status = abort(&mut out, day, format!("world update: {e}"))?;
                return Ok(finish(world.history, status, requests));
            }
        };
        if let Some(log) = update.exchange {
            requests += u64::from(log.transport_attempts);
            out.write(
                day,
                None,
                Event::Response {
                    attempt: log.attempt,
                    request_tag: log.request_tag.unwrap_or_default(),
                    content: log.content.unwrap_or_default(),
                    finish_reason: log.finish_reason.unwrap_or_default(),
                    transport_attempts: log.transport_attempts,
                    latency_ms: latency_ms(log.latency_ms),
                },
            )?;
        }
        out.write(day, None, Event::Summary { text: update.summary.clone() })?;

        let record = DailyRecord {
            day,
            actions_by_nation: turns.into_iter().map(|t| (t.nation, t.actions)).collect(),
            daily_score_by_nation: scores,
            world_summary_after: update.summary,
        };
        world = world.advance_day(record)?;
        out.write(day, None, Event::DayEnd)?;

        if options.halt_after_day == Some(day) && !world.is_finished() {
            return Ok(finish(world.history, RunStatus::Incomplete, requests));
        }
    }
    out.write(world.current_day, None, Event::RunEnd { status: RunStatus::Completed })?;
    Ok(finish(world.history, RunStatus::Completed, requests))
}
