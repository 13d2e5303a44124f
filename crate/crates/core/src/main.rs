use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wargame::experiment::{
    run_experiment, ExperimentError, ExperimentOptions, ExperimentPlan, MANIFEST_FILE,
};
use wargame::prompts::{PromptBuilder, PromptTemplates, PromptVariant};
use wargame::report::{self, ReportError, ReportOptions};
use wargame::scoring::Aggregator;
use wargame::stats::SignificanceTest;
use wargame::world::{load_scenario, WorldState};
use wargame::{defaults, taxonomy, ScriptedTable};

#[derive(Parser)]
#[command(name = "wargame", version, about = "Nation-agent wargame simulations and escalation reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check configuration files and render every prompt variant.
    Validate(ValidateArgs),
    /// Run a single simulation.
    Simulate(SimulateArgs),
    /// Run (or resume) every treatment and seed of a plan.
    Experiment(ExperimentArgs),
    /// Compute tables and figures from an experiment manifest.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Scenario TOML; the built-in neutral scenario when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Action taxonomy TOML; the built-in menu when absent.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Directory holding the four prompt templates.
    #[arg(long)]
    prompts_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Also check these scripted action tables.
    #[arg(long = "script")]
    scripts: Vec<PathBuf>,
    /// Also check these experiment plans.
    #[arg(long = "plan")]
    plans: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportKind {
    Mock,
    Replay,
    Live,
}

#[derive(Clone, Copy, ValueEnum)]
enum ResponderKind {
    Scripted,
    Synthetic,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Llm,
    Scripted,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpdaterArg {
    Llm,
    Template,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    Logical,
    Wall,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// default, context, reflection_planning or reflection_de_escalation.
    #[arg(long, default_value = "default", value_parser = parse_variant)]
    variant: PromptVariant,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "mock")]
    transport: TransportKind,
    /// Mock transport answer source.
    #[arg(long, value_enum, default_value = "synthetic")]
    responder: ResponderKind,
    /// Scripted action table (scripted policy or scripted responder).
    #[arg(long)]
    script: Option<PathBuf>,
    /// Cassette file or directory for the replay transport.
    #[arg(long)]
    cassettes: Option<PathBuf>,
    /// Chat-completions URL for the live transport.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = wargame::experiment::DEFAULT_API_KEY_ENV)]
    api_key_env: String,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum, default_value = "llm")]
    policy: PolicyArg,
    #[arg(long, value_enum, default_value = "llm")]
    updater: UpdaterArg,
    /// Logical timestamps make transcripts byte-reproducible.
    #[arg(long, value_enum, default_value = "logical")]
    clock: ClockArg,
    #[arg(long, default_value = "out/simulate")]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Plan TOML.
    plan: PathBuf,
    #[arg(long, default_value = "out/experiment")]
    out: PathBuf,
    /// Serve every request from recorded cassettes (file or directory),
    /// matching strictly, instead of the plan's transport.
    #[arg(long)]
    cassettes: Option<PathBuf>,
    #[arg(long, hide = true)]
    halt_after_day: Option<u32>,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment manifest (or the directory holding it).
    manifest: PathBuf,
    /// Output directory; `<manifest dir>/report` when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// mean_daily or day14_cumulative; the manifest's choice when absent.
    #[arg(long, value_parser = parse_aggregator)]
    aggregator: Option<Aggregator>,
    /// mann_whitney, mann_whitney_exact or welch.
    #[arg(long, value_parser = parse_test)]
    test: Option<SignificanceTest>,
    #[arg(long)]
    baseline: Option<String>,
    /// Leave the generation time out of figure metadata.
    #[arg(long)]
    no_timestamp: bool,
}

fn parse_variant(s: &str) -> Result<PromptVariant, String> {
    PromptVariant::ALL
        .into_iter()
        .find(|v| v.key() == s.replace('-', "_"))
        .ok_or_else(|| format!("unknown variant `{s}`"))
}

fn parse_aggregator(s: &str) -> Result<Aggregator, String> {
    s.parse().map_err(|e: wargame::scoring::ScoringError| e.to_string())
}

fn parse_test(s: &str) -> Result<SignificanceTest, String> {
    s.parse().map_err(|e: wargame::stats::StatsError| e.to_string())
}

struct Failure {
    kind: &'static str,
    msg: String,
}

impl Failure {
    fn new(kind: &'static str, msg: impl ToString) -> Self {
        Self {
            kind,
            msg: msg.to_string(),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let kind = match &e {
            ExperimentError::Plan(_) => "plan",
            ExperimentError::Io { .. } => "io",
            ExperimentError::Scenario(_) => "scenario",
            ExperimentError::Taxonomy(_) => "taxonomy",
            ExperimentError::Prompt(_) => "prompt",
            ExperimentError::Script(_) => "script",
            ExperimentError::Simulation(_) => "simulation",
            ExperimentError::Transport(_) => "transport",
            ExperimentError::Manifest { .. } => "manifest",
        };
        Self::new(kind, e)
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Manifest(inner) => inner.into(),
            ReportError::Io { .. } => Self::new("io", e),
            ReportError::Transcript(_) => Self::new("transcript", e),
            _ => Self::new("report", e),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={line}");
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Validate(a) => validate(a),
        Command::Simulate(a) => simulate(a),
        Command::Experiment(a) => experiment(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: kind={} msg={}", f.kind, f.msg.replace('\n', " "));
            ExitCode::from(if f.kind == "usage" { 2 } else { 1 })
        }
    }
}

fn validate(a: ValidateArgs) -> Result<(), Failure> {
    let taxonomy = match &a.config.taxonomy {
        Some(p) => taxonomy::load_taxonomy(p).map_err(|e| Failure::new("taxonomy", e))?,
        None => defaults::taxonomy(),
    };
    let scenario = match &a.config.scenario {
        Some(p) => load_scenario(p).map_err(|e| Failure::new("scenario", e))?,
        None => defaults::scenario(),
    };
    let builder = match &a.config.prompts_dir {
        Some(d) => PromptTemplates::load_dir(d).and_then(PromptBuilder::new),
        None => Ok(PromptBuilder::default()),
    }
    .map_err(|e| Failure::new("prompt", e))?;
    let (lo, hi) = taxonomy.score_range();
    println!(
        "taxonomy {}: {} actions, scores {lo}..{hi}",
        taxonomy.version(),
        taxonomy.len()
    );
    let counts: Vec<String> = taxonomy
        .category_counts()
        .iter()
        .map(|(c, n)| format!("{}={n}", c.key()))
        .collect();
    println!("categories: {}", counts.join(" "));
    let nations: Vec<&str> = scenario.nation_names().collect();
    println!(
        "scenario {}: {} nations, {} days ({})",
        scenario.name,
        nations.len(),
        scenario.days,
        nations.join(", ")
    );
    let world = WorldState::initial(&scenario);
    for variant in PromptVariant::ALL {
        let bundle = builder
            .build(&scenario, &taxonomy, &world, nations[0], variant)
            .map_err(|e| Failure::new("prompt", e))?;
        println!("variant {:<26} sha256={}", variant.key(), bundle.digest());
    }
    for path in &a.scripts {
        let table = ScriptedTable::load(path).map_err(|e| Failure::new("script", e))?;
        table
            .validate(&taxonomy, &scenario)
            .map_err(|e| Failure::new("script", format!("{}: {e}", path.display())))?;
        println!("script {}: ok", path.display());
    }
    for path in &a.plans {
        let plan = ExperimentPlan::load(path)?;
        plan.load_scenario()?;
        plan.load_taxonomy()?;
        plan.load_prompts()?;
        println!(
            "plan {}: {} treatments x {} runs",
            path.display(),
            plan.treatments.len(),
            plan.runs_per_treatment
        );
    }
    Ok(())
}

fn absolute(p: &Path) -> Result<String, Failure> {
    std::path::absolute(p)
        .map(|p| p.display().to_string())
        .map_err(|e| Failure::new("io", format!("{}: {e}", p.display())))
}

/// A one-treatment, one-run plan assembled from the flags.
fn simulate_plan(a: &SimulateArgs) -> Result<ExperimentPlan, Failure> {
    use toml::Value;
    let mut plan = toml::Table::new();
    plan.insert("name".into(), Value::from("simulate"));
    plan.insert("runs_per_treatment".into(), Value::from(1));
    plan.insert("base_seed".into(), Value::from(a.seed as i64));
    for (key, path) in [
        ("scenario", &a.config.scenario),
        ("taxonomy", &a.config.taxonomy),
        ("prompts_dir", &a.config.prompts_dir),
        ("script", &a.script),
    ] {
        if let Some(p) = path {
            plan.insert(key.into(), Value::from(absolute(p)?));
        }
    }
    let pick = |b: bool, x: &str, y: &str| Value::from(if b { x } else { y });
    plan.insert("policy".into(), pick(matches!(a.policy, PolicyArg::Llm), "llm", "scripted"));
    plan.insert("updater".into(), pick(matches!(a.updater, UpdaterArg::Llm), "llm", "template"));
    plan.insert("clock".into(), pick(matches!(a.clock, ClockArg::Logical), "logical", "wall"));
    if let Some(m) = &a.model {
        plan.insert("model".into(), Value::from(m.as_str()));
    }
    let mut transport = toml::Table::new();
    match a.transport {
        TransportKind::Mock => {
            transport.insert("kind".into(), Value::from("mock"));
            let responder = match a.responder {
                ResponderKind::Scripted => "scripted",
                ResponderKind::Synthetic => "synthetic",
            };
            transport.insert("responder".into(), Value::from(responder));
        }
        TransportKind::Replay => {
            let c = a
                .cassettes
                .as_ref()
                .ok_or_else(|| Failure::new("usage", "--transport replay needs --cassettes"))?;
            transport.insert("kind".into(), Value::from("replay"));
            transport.insert("cassettes".into(), Value::from(absolute(c)?));
        }
        TransportKind::Live => {
            let e = a
                .endpoint
                .as_ref()
                .ok_or_else(|| Failure::new("usage", "--transport live needs --endpoint"))?;
            transport.insert("kind".into(), Value::from("live"));
            transport.insert("endpoint".into(), Value::from(e.as_str()));
            transport.insert("api_key_env".into(), Value::from(a.api_key_env.as_str()));
        }
    }
    plan.insert("transport".into(), Value::Table(transport));
    let mut t = toml::Table::new();
    let treatment = wargame::Treatment::new(
        wargame::Treatment::default_label(a.temperature, a.variant),
        a.temperature,
        a.variant,
    )
    .map_err(|e| Failure::new("usage", e))?;
    t.insert("label".into(), Value::from(treatment.label.as_str()));
    t.insert("temperature".into(), Value::from(a.temperature));
    t.insert("variant".into(), Value::from(a.variant.key()));
    plan.insert("treatments".into(), Value::Array(vec![Value::Table(t)]));
    let text = toml::to_string(&plan).expect("plan serializes");
    let cwd = std::env::current_dir().map_err(|e| Failure::new("io", e))?;
    Ok(ExperimentPlan::from_toml_str(&text, cwd)?)
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let plan = simulate_plan(&a)?;
    let result = run_experiment(&plan, &a.out, &ExperimentOptions::default())?;
    let entry = &result.manifest.runs[0];
    println!("transcript: {}", a.out.join(&entry.transcript).display());
    println!("status: {}", entry.status);
    println!("days: {}  requests: {}", entry.days_completed, entry.requests);
    if !entry.status.is_completed() {
        return Err(Failure::new("simulation", format!("run {}", entry.status)));
    }
    let (run, _) = wargame::orchestrator::load_run(&a.out.join(&entry.transcript))
        .map_err(|e| Failure::new("transcript", e))?;
    let scores = wargame::scoring::run_score::<f64>(&run, Aggregator::MeanDaily)
        .map_err(|e| Failure::new("scoring", e))?;
    for (nation, s) in scores {
        println!("  {nation:<10} mean daily score {s:.2}");
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<(), Failure> {
    let mut plan = ExperimentPlan::load(&a.plan)?;
    if let Some(c) = &a.cassettes {
        plan.transport = wargame::experiment::TransportConfig::Replay {
            cassettes: PathBuf::from(absolute(c)?),
            match_mode: wargame::llm::MatchMode::Strict,
        };
    }
    let options = ExperimentOptions {
        halt_after_day: a.halt_after_day,
    };
    let result = run_experiment(&plan, &a.out, &options)?;
    println!("manifest: {}", result.manifest_path.display());
    println!(
        "runs: {} executed, {} already complete; requests this invocation: {}",
        result.runs_executed, result.runs_skipped, result.requests_issued
    );
    let failed: Vec<String> = result
        .failures()
        .map(|r| format!("{}-seed{}", r.treatment, r.seed))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(
            "simulation",
            format!("{} runs aborted: {}", failed.len(), failed.join(" ")),
        ))
    }
}

fn report_cmd(a: ReportArgs) -> Result<(), Failure> {
    let manifest = if a.manifest.is_dir() {
        a.manifest.join(MANIFEST_FILE)
    } else {
        a.manifest.clone()
    };
    let out = match &a.out {
        Some(o) => o.clone(),
        None => manifest.parent().unwrap_or(Path::new(".")).join("report"),
    };
    let options = ReportOptions {
        aggregator: a.aggregator,
        significance: a.test,
        baseline: a.baseline.clone(),
        timestamp: (!a.no_timestamp)
            .then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
    };
    let bundle = report::build_report(&manifest, &options)?;
    let written = report::write_report(&bundle, &out)?;
    print!("{}", report::format_tables(&bundle));
    println!();
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
