//! Treatment × replication plans: loading, execution and the run manifest.
//!
//! Layout of an experiment directory:
//!
//! ```text
//! <out>/manifest.json
//! <out>/transcripts/<label>/seed-<seed>.jsonl
//! <out>/cassettes/<label>.jsonl        (only when recording)
//! ```
//!
//! Re-running a plan skips runs whose transcripts are complete and resumes
//! partial ones from their last finished day.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::scripted::{scripted_responder, ScriptError};
use crate::agents::{AgentPolicy, LlmPolicy, ScriptedPolicy, ScriptedTable, SyntheticResponder};
use crate::defaults;
use crate::llm::{
    LiveConfig, LiveTransport, LlmClient, MatchMode, MockTransport, RecordingTransport, ReplayTransport,
    RequestBudget, Transport, DEFAULT_MAX_TOKENS, DEFAULT_MODEL, DEFAULT_REQUEST_BUDGET,
};
use crate::orchestrator::transcript::Clock;
use crate::orchestrator::{
    load_run, run_simulation, LlmUpdater, RunOptions, RunSetup, RunStatus, SimulationError, TemplateUpdater,
    Treatment, Visibility, WorldUpdater,
};
use crate::prompts::{sha256_hex, PromptBuilder, PromptError, PromptTemplates, PromptVariant};
use crate::scoring::Aggregator;
use crate::stats::SignificanceTest;
use crate::taxonomy::{load_taxonomy, ActionTaxonomy, TaxonomyError};
use crate::world::{load_scenario, Scenario, ScenarioError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_API_KEY_ENV: &str = "MISTRAL_API_KEY";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("transport setup: {0}")]
    Transport(String),
    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
}

impl ExperimentError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Llm,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdaterKind {
    #[default]
    Llm,
    Template,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockResponder {
    /// Answers from the treatment's scripted table.
    #[default]
    Scripted,
    /// Seeded random choices; see [`SyntheticResponder`].
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransportConfig {
    Mock {
        #[serde(default)]
        responder: MockResponder,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        malformed_rate: Option<f64>,
        /// Write every exchange to `<out>/cassettes/<label>.jsonl`.
        #[serde(default)]
        record: bool,
    },
    Replay {
        /// A cassette file, or a directory whose `*.jsonl` files are all loaded.
        cassettes: PathBuf,
        #[serde(default, rename = "match")]
        match_mode: MatchMode,
    },
    Live {
        endpoint: String,
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_in_flight: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        requests_per_minute: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<u64>,
        #[serde(default)]
        record: bool,
    },
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanTreatment {
    pub label: String,
    pub temperature: f64,
    #[serde(default = "default_variant")]
    pub variant: PromptVariant,
    /// Scripted table for this treatment; overrides the plan-level `script`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
}

fn default_variant() -> PromptVariant {
    PromptVariant::Default
}

impl PlanTreatment {
    pub fn treatment(&self) -> Treatment {
        Treatment {
            label: self.label.clone(),
            temperature: self.temperature,
            variant: self.variant,
        }
    }
}

fn default_runs() -> u32 {
    10
}
fn default_parallelism() -> usize {
    1
}
fn default_retries() -> u32 {
    crate::agents::DEFAULT_MAX_PARSE_RETRIES
}
fn default_budget() -> u64 {
    DEFAULT_REQUEST_BUDGET
}
fn default_model() -> String {
    DEFAULT_MODEL.to_string()
}
fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

/// An experiment plan file. Relative paths resolve against the plan's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    /// Scenario file; the built-in neutral scenario when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    /// Taxonomy file; the built-in menu when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<PathBuf>,
    /// Directory with `system.txt`, `user.txt`, `world_system.txt`, `world_user.txt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default = "default_runs")]
    pub runs_per_treatment: u32,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub aggregator: Aggregator,
    #[serde(default)]
    pub significance: SignificanceTest,
    /// Label of the reference treatment; the first treatment when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_retries")]
    pub max_parse_retries: u32,
    /// Cap on chat requests over the whole experiment.
    #[serde(default = "default_budget")]
    pub request_budget: u64,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub clock: Clock,
    #[serde(default)]
    pub visibility: Visibility,
    #[serde(default)]
    pub policy: PolicyKind,
    #[serde(default)]
    pub updater: UpdaterKind,
    /// Default scripted table (scripted policy or scripted mock responder).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    pub transport: TransportConfig,
    pub treatments: Vec<PlanTreatment>,
    #[serde(skip)]
    base_dir: PathBuf,
    #[serde(skip)]
    source_sha256: String,
}

impl ExperimentPlan {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ExperimentError> {
        let mut plan: Self = toml::from_str(text).map_err(|e| ExperimentError::Plan(e.message().to_string()))?;
        plan.base_dir = base_dir.into();
        plan.source_sha256 = sha256_hex(text);
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base)
    }

    /// sha256 of the plan text this plan was parsed from.
    pub fn source_sha256(&self) -> &str {
        &self.source_sha256
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn baseline_label(&self) -> &str {
        self.baseline
            .as_deref()
            .unwrap_or_else(|| self.treatments[0].label.as_str())
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..u64::from(self.runs_per_treatment)).map(|i| self.base_seed + i)
    }

    fn needs_script(&self) -> bool {
        self.policy == PolicyKind::Scripted
            || matches!(
                self.transport,
                TransportConfig::Mock {
                    responder: MockResponder::Scripted,
                    ..
                }
            )
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Plan(m));
        if self.treatments.is_empty() {
            return bad("no treatments".into());
        }
        if self.runs_per_treatment < 1 {
            return bad("runs_per_treatment must be at least 1".into());
        }
        if self.parallelism < 1 {
            return bad("parallelism must be at least 1".into());
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        let mut labels = HashSet::new();
        for t in &self.treatments {
            t.treatment().validate().map_err(|e| ExperimentError::Plan(e.to_string()))?;
            if !labels.insert(t.label.as_str()) {
                return bad(format!("duplicate treatment label `{}`", t.label));
            }
            if self.needs_script() && t.script.is_none() && self.script.is_none() {
                return bad(format!("treatment `{}` needs a script (set `script`)", t.label));
            }
        }
        if let Some(b) = &self.baseline {
            if !labels.contains(b.as_str()) {
                return bad(format!("baseline `{b}` is not a treatment label"));
            }
        }
        if let TransportConfig::Mock {
            malformed_rate: Some(r),
            ..
        } = self.transport
        {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("malformed_rate {r} outside [0, 1]"));
            }
        }
        if self.base_seed.checked_add(u64::from(self.runs_per_treatment)).is_none() {
            return bad("base_seed + runs_per_treatment overflows".into());
        }
        Ok(())
    }

    pub fn load_scenario(&self) -> Result<Scenario, ExperimentError> {
        Ok(match &self.scenario {
            Some(p) => load_scenario(self.resolve(p))?,
            None => defaults::scenario(),
        })
    }

    pub fn load_taxonomy(&self) -> Result<ActionTaxonomy, ExperimentError> {
        Ok(match &self.taxonomy {
            Some(p) => load_taxonomy(self.resolve(p))?,
            None => defaults::taxonomy(),
        })
    }

    pub fn load_prompts(&self) -> Result<PromptBuilder, ExperimentError> {
        Ok(match &self.prompts_dir {
            Some(p) => PromptBuilder::new(PromptTemplates::load_dir(self.resolve(p))?)?,
            None => PromptBuilder::default(),
        })
    }

    fn script_for(&self, t: &PlanTreatment) -> Option<PathBuf> {
        t.script.as_ref().or(self.script.as_ref()).map(|p| self.resolve(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub treatment: String,
    pub temperature: f64,
    pub variant: PromptVariant,
    pub seed: u64,
    /// Relative to the manifest's directory, `/`-separated.
    pub transcript: String,
    pub status: RunStatus,
    pub days_completed: u32,
    pub requests: u64,
}

impl ManifestEntry {
    pub fn treatment(&self) -> Treatment {
        Treatment {
            label: self.treatment.clone(),
            temperature: self.temperature,
            variant: self.variant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub plan: String,
    pub plan_sha256: String,
    pub scenario: String,
    pub taxonomy_version: String,
    pub aggregator: Aggregator,
    pub significance: SignificanceTest,
    pub baseline: String,
    /// Treatment labels in plan order.
    pub treatments: Vec<String>,
    pub runs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Manifest {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn write_atomic(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| ExperimentError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| ExperimentError::io(path, e))
    }
}

pub fn transcript_rel_path(label: &str, seed: u64) -> String {
    format!("transcripts/{label}/seed-{seed}.jsonl")
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    /// Stop every run after this day without finishing it.
    pub halt_after_day: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub runs_executed: usize,
    pub runs_skipped: usize,
    /// Requests issued during this invocation.
    pub requests_issued: u64,
}

impl ExperimentResult {
    pub fn failures(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.manifest
            .runs
            .iter()
            .filter(|r| matches!(r.status, RunStatus::Aborted { .. }))
    }
}

/// Everything shared by the runs of one experiment.
struct Shared<'a> {
    plan: &'a ExperimentPlan,
    scenario: Scenario,
    taxonomy: ActionTaxonomy,
    prompts: PromptBuilder,
    /// Per treatment: client (if the plan queries a model) and scripted table.
    clients: Vec<Option<LlmClient>>,
    tables: Vec<Option<ScriptedTable>>,
    out_dir: &'a Path,
    options: &'a ExperimentOptions,
}

fn load_cassettes(path: &Path, mode: MatchMode) -> Result<ReplayTransport, ExperimentError> {
    let files = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| ExperimentError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    ReplayTransport::open_many(&files, mode).map_err(|e| ExperimentError::io(path, e))
}

fn build_transports(
    plan: &ExperimentPlan,
    tables: &[Option<ScriptedTable>],
    taxonomy: &ActionTaxonomy,
    scenario: &Scenario,
    out_dir: &Path,
) -> Result<Vec<Arc<dyn Transport>>, ExperimentError> {
    let recorder = |label: &str, inner: Arc<dyn Transport>| -> Result<Arc<dyn Transport>, ExperimentError> {
        let dir = out_dir.join("cassettes");
        std::fs::create_dir_all(&dir).map_err(|e| ExperimentError::io(&dir, e))?;
        let path = dir.join(format!("{label}.jsonl"));
        let rec = RecordingTransport::new(inner, &path).map_err(|e| ExperimentError::io(&path, e))?;
        Ok(Arc::new(rec))
    };
    let mut out = Vec::new();
    match &plan.transport {
        TransportConfig::Mock {
            responder,
            malformed_rate,
            record,
        } => {
            let nations: Vec<String> = scenario.nation_names().map(str::to_string).collect();
            for (t, table) in plan.treatments.iter().zip(tables) {
                let mock: Arc<dyn Transport> = match responder {
                    MockResponder::Scripted => {
                        let table = table.clone().expect("validated: scripted responder has a table");
                        Arc::new(MockTransport::new(scripted_responder(Arc::new(table))).without_capture())
                    }
                    MockResponder::Synthetic => {
                        let mut s = SyntheticResponder::new(taxonomy.clone(), nations.clone());
                        if let Some(r) = malformed_rate {
                            s = s.with_malformed_rate(*r);
                        }
                        Arc::new(MockTransport::new(move |r| s.respond(r)).without_capture())
                    }
                };
                out.push(if *record { recorder(&t.label, mock)? } else { mock });
            }
        }
        TransportConfig::Replay { cassettes, match_mode } => {
            let replay: Arc<dyn Transport> = Arc::new(load_cassettes(&plan.resolve(cassettes), *match_mode)?);
            out = vec![replay; plan.treatments.len()];
        }
        TransportConfig::Live {
            endpoint,
            api_key_env,
            max_in_flight,
            requests_per_minute,
            timeout_secs,
            record,
        } => {
            let key = std::env::var(api_key_env)
                .map_err(|_| ExperimentError::Transport(format!("environment variable {api_key_env} is not set")))?;
            let mut cfg = LiveConfig::new(endpoint.clone(), key);
            if let Some(n) = max_in_flight {
                cfg.max_in_flight = *n;
            }
            cfg.requests_per_minute = *requests_per_minute;
            if let Some(s) = timeout_secs {
                cfg.timeout = Duration::from_secs(*s);
            }
            let live: Arc<dyn Transport> =
                Arc::new(LiveTransport::new(cfg).map_err(|e| ExperimentError::Transport(e.to_string()))?);
            for t in &plan.treatments {
                out.push(if *record { recorder(&t.label, live.clone())? } else { live.clone() });
            }
        }
    }
    Ok(out)
}

fn execute_run(shared: &Shared<'_>, t_idx: usize, seed: u64) -> (ManifestEntry, bool) {
    let pt = &shared.plan.treatments[t_idx];
    let treatment = pt.treatment();
    let rel = transcript_rel_path(&pt.label, seed);
    let path = shared.out_dir.join(&rel);
    let entry = |status: RunStatus, days: usize, requests: u64| ManifestEntry {
        treatment: pt.label.clone(),
        temperature: pt.temperature,
        variant: pt.variant,
        seed,
        transcript: rel.clone(),
        status,
        days_completed: days as u32,
        requests,
    };
    if path.exists() {
        if let Ok((run, _)) = load_run(&path) {
            if run.status.is_completed() && run.treatment == treatment && run.seed == seed {
                tracing::debug!(run = %run.run_id(), "transcript complete, skipping");
                return (entry(RunStatus::Completed, run.days.len(), run.requests), false);
            }
        }
    }
    let policy: Box<dyn AgentPolicy> = match shared.plan.policy {
        PolicyKind::Llm => Box::new(LlmPolicy::new(
            shared.clients[t_idx].as_ref().expect("client").fork(),
            shared.plan.model.clone(),
            shared.plan.max_tokens,
        )),
        PolicyKind::Scripted => Box::new(ScriptedPolicy::new(
            shared.tables[t_idx].clone().expect("validated: scripted policy has a table"),
        )),
    };
    let updater: Box<dyn WorldUpdater> = match shared.plan.updater {
        UpdaterKind::Llm => Box::new(LlmUpdater::new(
            shared.clients[t_idx].as_ref().expect("client").fork(),
            shared.plan.model.clone(),
            shared.plan.max_tokens,
        )),
        UpdaterKind::Template => Box::new(TemplateUpdater),
    };
    let setup = RunSetup {
        scenario: &shared.scenario,
        taxonomy: &shared.taxonomy,
        prompts: &shared.prompts,
        treatment: &treatment,
        seed,
        transcript_path: &path,
    };
    let options = RunOptions {
        max_parse_retries: shared.plan.max_parse_retries,
        visibility: shared.plan.visibility,
        clock: shared.plan.clock,
        resume: true,
        halt_after_day: shared.options.halt_after_day,
    };
    match run_simulation(&setup, policy.as_ref(), updater.as_ref(), &options) {
        Ok(run) => {
            tracing::info!(run = %run.run_id(), status = %run.status, "run finished");
            (entry(run.status, run.days.len(), run.requests), true)
        }
        Err(e) => {
            tracing::error!(treatment = %pt.label, seed, "run failed: {e}");
            (entry(RunStatus::Aborted { reason: e.to_string() }, 0, 0), true)
        }
    }
}

/// Runs (or resumes) every treatment × seed of `plan`, writing transcripts
/// and the manifest under `out_dir`.
pub fn run_experiment(
    plan: &ExperimentPlan,
    out_dir: &Path,
    options: &ExperimentOptions,
) -> Result<ExperimentResult, ExperimentError> {
    plan.validate()?;
    let scenario = plan.load_scenario()?;
    let taxonomy = plan.load_taxonomy()?;
    let prompts = plan.load_prompts()?;
    let mut tables = Vec::new();
    for t in &plan.treatments {
        let table = match plan.script_for(t) {
            Some(p) if plan.needs_script() => {
                let table = ScriptedTable::load(&p)?;
                table.validate(&taxonomy, &scenario)?;
                Some(table)
            }
            _ => None,
        };
        tables.push(table);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| ExperimentError::io(out_dir, e))?;
    let uses_model = plan.policy == PolicyKind::Llm || plan.updater == UpdaterKind::Llm;
    let budget = Arc::new(RequestBudget::new(plan.request_budget));
    let clients: Vec<Option<LlmClient>> = if uses_model {
        build_transports(plan, &tables, &taxonomy, &scenario, out_dir)?
            .into_iter()
            .map(|t| Some(LlmClient::new(t).with_budget(budget.clone())))
            .collect()
    } else {
        vec![None; plan.treatments.len()]
    };

    let manifest_path = out_dir.join(MANIFEST_FILE);
    let jobs: Vec<(usize, u64)> = (0..plan.treatments.len())
        .flat_map(|t| plan.seeds().map(move |s| (t, s)))
        .collect();
    let base_manifest = Manifest {
        plan: plan.name.clone(),
        plan_sha256: plan.source_sha256.clone(),
        scenario: scenario.name.clone(),
        taxonomy_version: taxonomy.version().to_string(),
        aggregator: plan.aggregator,
        significance: plan.significance,
        baseline: plan.baseline_label().to_string(),
        treatments: plan.treatments.iter().map(|t| t.label.clone()).collect(),
        runs: Vec::new(),
    };
    let shared = Shared {
        plan,
        scenario,
        taxonomy,
        prompts,
        clients,
        tables,
        out_dir,
        options,
    };
    let results: Mutex<Vec<Option<(ManifestEntry, bool)>>> = Mutex::new(vec![None; jobs.len()]);
    let write_error: Mutex<Option<ExperimentError>> = Mutex::new(None);
    let snapshot = |results: &[Option<(ManifestEntry, bool)>]| {
        let mut m = base_manifest.clone();
        m.runs = results.iter().flatten().map(|(e, _)| e.clone()).collect();
        m
    };
    let next = AtomicUsize::new(0);
    let workers = plan.parallelism.min(jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(t_idx, seed)) = jobs.get(i) else { break };
                let outcome = execute_run(&shared, t_idx, seed);
                let mut guard = results.lock().expect("results lock");
                guard[i] = Some(outcome);
                if let Err(e) = snapshot(&guard).write_atomic(&manifest_path) {
                    write_error.lock().expect("error lock").get_or_insert(e);
                }
            });
        }
    });
    if let Some(e) = write_error.into_inner().expect("error lock") {
        return Err(e);
    }
    let results = results.into_inner().expect("results lock");
    let manifest = snapshot(&results);
    manifest.write_atomic(&manifest_path)?;
    let executed = results.iter().flatten().filter(|(_, ran)| *ran).count();
    Ok(ExperimentResult {
        manifest,
        manifest_path,
        runs_executed: executed,
        runs_skipped: results.len() - executed,
        requests_issued: budget.used(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAN: &str = r#"
name = "small"
runs_per_treatment = 2
base_seed = 5
policy = "scripted"
updater = "template"
clock = "logical"
script = "script.toml"

[transport]
kind = "mock"

[[treatments]]
label = "t1.0-default"
temperature = 1.0
"#;

    fn write_plan(dir: &Path, text: &str) -> PathBuf {
        std::fs::write(dir.join("script.toml"), "default = [\"military_posturing\"]\n").unwrap();
        let p = dir.join("plan.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn smallest_plan_completes_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let plan = ExperimentPlan::load(write_plan(dir.path(), PLAN)).unwrap();
        let out = dir.path().join("out");
        let r = run_experiment(&plan, &out, &ExperimentOptions::default()).unwrap();
        assert_eq!(r.runs_executed, 2);
        let seeds: Vec<u64> = r.manifest.runs.iter().map(|e| e.seed).collect();
        assert_eq!(seeds, [5, 6]);
        assert!(r.manifest.runs.iter().all(|e| e.status == RunStatus::Completed && e.days_completed == 14));
        let before = std::fs::read(&r.manifest_path).unwrap();
        let again = run_experiment(&plan, &out, &ExperimentOptions::default()).unwrap();
        assert_eq!((again.runs_executed, again.runs_skipped), (0, 2));
        assert_eq!(std::fs::read(&again.manifest_path).unwrap(), before);
    }

    #[test]
    fn plan_validation() {
        let base = Path::new(".");
        assert!(ExperimentPlan::from_toml_str(PLAN, base).is_ok());
        let cases = [
            PLAN.replace("runs_per_treatment = 2", "runs_per_treatment = 0"),
            PLAN.replace("temperature = 1.0", "temperature = 3.0"),
            PLAN.replace("script = \"script.toml\"", ""),
            PLAN.replace("name = \"small\"", "name = \"small\"\nbaseline = \"nope\""),
            PLAN.replace("name = \"small\"", "name = \"small\"\nbogus = 1"),
            PLAN.replace("kind = \"mock\"", "kind = \"carrier-pigeon\""),
            format!("{PLAN}\n[[treatments]]\nlabel = \"t1.0-default\"\ntemperature = 0.5\n"),
        ];
        for text in cases {
            assert!(ExperimentPlan::from_toml_str(&text, base).is_err(), "{text}");
        }
    }

    #[test]
    fn missing_api_key_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let text = PLAN
            .replace("policy = \"scripted\"", "policy = \"llm\"")
            .replace(
                "kind = \"mock\"",
                "kind = \"live\"\nendpoint = \"http://127.0.0.1:9\"\napi_key_env = \"WARGAME_TEST_UNSET_KEY\"",
            );
        let plan = ExperimentPlan::load(write_plan(dir.path(), &text)).unwrap();
        let err = run_experiment(&plan, &dir.path().join("out"), &ExperimentOptions::default()).unwrap_err();
        assert!(err.to_string().contains("WARGAME_TEST_UNSET_KEY"));
    }
}
