//! Nation-agent wargame engine and experiment harness.
//!
//! Eight LLM-driven nations play a fixed number of days, choosing actions
//! from a scored escalation menu. Runs are logged to JSON-lines transcripts;
//! scoring, statistics and figures are recomputed from those transcripts.

pub mod agents;
pub mod defaults;
pub mod experiment;
pub mod llm;
pub mod num;
pub mod orchestrator;
pub mod prompts;
pub mod report;
pub mod scoring;
pub mod stats;
pub mod taxonomy;
pub mod world;

pub use agents::{AgentPolicy, AgentTurn, LlmPolicy, ReplayPolicy, ScriptedPolicy, ScriptedTable};
pub use llm::{ChatRequest, ChatResponse, LlmClient, LlmError};
pub use num::Real;
pub use orchestrator::{run_simulation, RunStatus, SimulationRun, Treatment};
pub use prompts::{PromptBundle, PromptVariant};
pub use scoring::Aggregator;
pub use taxonomy::{ActionCategory, ActionSpec, ActionTaxonomy};
pub use world::{ChosenAction, DailyRecord, Scenario, WorldState};

pub type SummaryStats = stats::Summary<f64>;
pub type SummaryStatsF32 = stats::Summary<f32>;
pub type DailySeriesStats = stats::DailySeriesStats<f64>;
pub type DailySeriesStatsF32 = stats::DailySeriesStats<f32>;
pub type SignificanceResult = stats::SignificanceResult<f64>;
pub type CategoryCounts = scoring::CategoryCounts<f64>;
pub type CategoryCountsF32 = scoring::CategoryCounts<f32>;
