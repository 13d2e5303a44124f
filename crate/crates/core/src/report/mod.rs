//! Tables and figures computed from an experiment manifest and its transcripts.

pub mod svg;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::experiment::{ExperimentError, Manifest};
use crate::orchestrator::{load_run, SimulationError, SimulationRun, Treatment};
use crate::prompts::PromptVariant;
use crate::scoring::{self, Aggregator, CategoryCounts, ScoringError};
use crate::stats::{self, DailySeriesStats, SignificanceResult, SignificanceTest, StatsError, Summary};
use crate::taxonomy::{ActionCategory, ActionTaxonomy};

pub use svg::{emit_boxplot, emit_category_chart, emit_timeseries, FigureError, SeriesInput};

pub const FIGURE_FILES: [&str; 4] = ["fig1.svg", "fig2.svg", "fig3.svg", "fig4.svg"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Manifest(#[from] ExperimentError),
    #[error(transparent)]
    Transcript(#[from] SimulationError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Figure(#[from] FigureError),
    #[error("baseline treatment `{0}` has no completed runs")]
    NoBaseline(String),
    #[error("unknown baseline treatment `{0}`")]
    UnknownBaseline(String),
    #[error("runs disagree on the taxonomy version: `{0}` vs `{1}`")]
    MixedTaxonomy(String, String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> ReportError {
    ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Overrides the manifest's aggregator.
    pub aggregator: Option<Aggregator>,
    /// Overrides the manifest's significance test.
    pub significance: Option<SignificanceTest>,
    /// Overrides the manifest's baseline treatment.
    pub baseline: Option<String>,
    /// Timestamp written into figure metadata; `None` leaves it out.
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub plan: String,
    pub plan_sha256: String,
    pub scenario: String,
    pub taxonomy_version: String,
    pub aggregator: Aggregator,
    pub quartile_convention: String,
    pub significance_test: String,
    pub baseline: String,
    /// SHA-256 over the transcripts in manifest order.
    pub transcripts_sha256: String,
    pub runs_completed: usize,
    pub runs_excluded: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TreatmentReport {
    pub treatment: Treatment,
    pub runs: Vec<SimulationRun>,
    /// Per-nation-per-run aggregate scores.
    pub nation_scores: Vec<f64>,
    /// One aggregate per run (mean over nations).
    pub run_scores: Vec<f64>,
    pub summary: Option<Summary<f64>>,
    /// Per-run daily means over nations.
    pub daily_per_run: Vec<Vec<f64>>,
    pub daily: Option<DailySeriesStats<f64>>,
    pub categories: Option<CategoryCounts<f64>>,
    pub requests: u64,
    pub runs_planned: usize,
}

impl TreatmentReport {
    pub fn label(&self) -> &str {
        &self.treatment.label
    }

    pub fn mean(&self) -> Option<f64> {
        self.summary.map(|s| s.mean)
    }

    /// Mean over runs of the per-day nation means.
    pub fn daily_means(&self) -> Vec<f64> {
        let days = self.daily_per_run.iter().map(Vec::len).max().unwrap_or(0);
        (0..days)
            .map(|d| {
                let col: Vec<f64> = self.daily_per_run.iter().filter_map(|r| r.get(d).copied()).collect();
                stats::mean(&col).unwrap_or(0.0)
            })
            .collect()
    }

    pub fn last_day_mean(&self) -> Option<f64> {
        self.daily_means().last().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionRow {
    pub treatment: String,
    pub baseline_mean: f64,
    pub treatment_mean: f64,
    pub reduction_pct: f64,
    pub baseline_last_day: f64,
    pub treatment_last_day: f64,
    pub last_day_reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceRow {
    pub treatment: String,
    pub result: Option<SignificanceResult<f64>>,
    /// Why no test was run.
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub aggregator: Aggregator,
    pub significance: SignificanceTest,
    pub baseline: String,
    pub taxonomy: ActionTaxonomy,
    pub treatments: Vec<TreatmentReport>,
    pub reductions: Vec<ReductionRow>,
    pub significance_rows: Vec<SignificanceRow>,
    pub provenance: Provenance,
    pub timestamp: Option<String>,
}

impl ReportBundle {
    pub fn treatment(&self, label: &str) -> Option<&TreatmentReport> {
        self.treatments.iter().find(|t| t.label() == label)
    }

    pub fn reduction(&self, label: &str) -> Option<&ReductionRow> {
        self.reductions.iter().find(|r| r.treatment == label)
    }
}

/// Loads every transcript listed in the manifest and computes all tables.
/// Runs that did not complete are excluded from the statistics.
pub fn build_report(manifest_path: &Path, options: &ReportOptions) -> Result<ReportBundle, ReportError> {
    let manifest = Manifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let aggregator = options.aggregator.unwrap_or(manifest.aggregator);
    let significance = options.significance.unwrap_or(manifest.significance);
    let baseline = options.baseline.clone().unwrap_or_else(|| manifest.baseline.clone());
    if !manifest.treatments.contains(&baseline) {
        return Err(ReportError::UnknownBaseline(baseline));
    }

    let mut hasher = Sha256::new();
    let mut taxonomy: Option<ActionTaxonomy> = None;
    let mut grouped: BTreeMap<String, Vec<SimulationRun>> = BTreeMap::new();
    let mut treatments: BTreeMap<String, Treatment> = BTreeMap::new();
    let mut planned: BTreeMap<String, usize> = BTreeMap::new();
    let mut requests: BTreeMap<String, u64> = BTreeMap::new();
    let mut excluded = Vec::new();
    for entry in &manifest.runs {
        let path = root.join(&entry.transcript);
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        hasher.update(entry.transcript.as_bytes());
        hasher.update([0]);
        hasher.update(&bytes);
        *planned.entry(entry.treatment.clone()).or_default() += 1;
        *requests.entry(entry.treatment.clone()).or_default() += entry.requests;
        treatments.entry(entry.treatment.clone()).or_insert_with(|| entry.treatment());
        let (run, tax) = load_run(&path)?;
        match &taxonomy {
            Some(t) if t.version() != tax.version() => {
                return Err(ReportError::MixedTaxonomy(t.version().into(), tax.version().into()));
            }
            Some(_) => {}
            None => taxonomy = Some(tax),
        }
        if run.status.is_completed() {
            grouped.entry(entry.treatment.clone()).or_default().push(run);
        } else {
            tracing::warn!(run = %run.run_id(), status = %run.status, "excluding run from report");
            excluded.push(run.run_id());
        }
    }
    let taxonomy = taxonomy.unwrap_or_else(crate::defaults::taxonomy);

    let mut reports = Vec::new();
    for label in &manifest.treatments {
        let Some(treatment) = treatments.get(label).cloned() else {
            continue;
        };
        let runs = grouped.remove(label).unwrap_or_default();
        reports.push(treatment_report(
            treatment,
            runs,
            aggregator,
            &taxonomy,
            planned[label],
            requests[label],
        )?);
    }

    let base = reports
        .iter()
        .find(|r| r.label() == baseline)
        .filter(|r| !r.runs.is_empty())
        .ok_or_else(|| ReportError::NoBaseline(baseline.clone()))?;
    let base_mean = base.mean().expect("nonempty");
    let base_last = base.last_day_mean().unwrap_or(0.0);
    let mut reductions = Vec::new();
    let mut significance_rows = Vec::new();
    for r in reports.iter().filter(|r| r.label() != baseline && !r.runs.is_empty()) {
        let mean = r.mean().expect("nonempty");
        let last = r.last_day_mean().unwrap_or(0.0);
        reductions.push(ReductionRow {
            treatment: r.label().to_string(),
            baseline_mean: base_mean,
            treatment_mean: mean,
            reduction_pct: stats::percent_reduction(base_mean, mean)?,
            baseline_last_day: base_last,
            treatment_last_day: last,
            last_day_reduction_pct: stats::percent_reduction(base_last, last).unwrap_or(f64::NAN),
        });
        significance_rows.push(match stats::significance_test(&base.run_scores, &r.run_scores, significance) {
            Ok(result) => SignificanceRow {
                treatment: r.label().to_string(),
                result: Some(result),
                note: None,
            },
            Err(e @ StatsError::InsufficientSample(..)) => SignificanceRow {
                treatment: r.label().to_string(),
                result: None,
                note: Some(e.to_string()),
            },
            Err(e) => return Err(e.into()),
        });
    }

    let provenance = Provenance {
        plan: manifest.plan.clone(),
        plan_sha256: manifest.plan_sha256.clone(),
        scenario: manifest.scenario.clone(),
        taxonomy_version: taxonomy.version().to_string(),
        aggregator,
        quartile_convention: stats::QUARTILE_CONVENTION.to_string(),
        significance_test: significance.description().to_string(),
        baseline: baseline.clone(),
        transcripts_sha256: hex::encode(hasher.finalize()),
        runs_completed: reports.iter().map(|r| r.runs.len()).sum(),
        runs_excluded: excluded,
    };
    Ok(ReportBundle {
        aggregator,
        significance,
        baseline,
        taxonomy,
        treatments: reports,
        reductions,
        significance_rows,
        provenance,
        timestamp: options.timestamp.clone(),
    })
}

fn treatment_report(
    treatment: Treatment,
    runs: Vec<SimulationRun>,
    aggregator: Aggregator,
    taxonomy: &ActionTaxonomy,
    runs_planned: usize,
    requests: u64,
) -> Result<TreatmentReport, ReportError> {
    let mut nation_scores = Vec::new();
    let mut run_scores = Vec::new();
    let mut daily_per_run = Vec::new();
    for run in &runs {
        nation_scores.extend(scoring::run_score::<f64>(run, aggregator)?.into_values());
        run_scores.push(scoring::run_level_score::<f64>(run, aggregator)?);
        daily_per_run.push(scoring::daily_nation_means::<f64>(run)?);
    }
    let summary = if nation_scores.is_empty() {
        None
    } else {
        Some(stats::summarize(&nation_scores)?)
    };
    let daily = match stats::ci95_per_day(&daily_per_run) {
        Ok(d) => Some(d),
        Err(StatsError::InsufficientRuns(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let categories = if runs.is_empty() {
        None
    } else {
        Some(scoring::category_frequencies::<f64>(&runs, taxonomy)?)
    };
    Ok(TreatmentReport {
        treatment,
        runs,
        nation_scores,
        run_scores,
        summary,
        daily_per_run,
        daily,
        categories,
        requests,
        runs_planned,
    })
}

fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn summary_csv(bundle: &ReportBundle) -> String {
    let mut out = format!(
        "treatment,temperature,variant,aggregator,runs_completed,runs_planned,n,mean,median,q1,q3,min,max,requests\n"
    );
    for r in &bundle.treatments {
        let _ = write!(
            out,
            "{},{},{},{},{},{},",
            csv_field(r.label()),
            r.treatment.temperature,
            r.treatment.variant.key(),
            bundle.aggregator.key(),
            r.runs.len(),
            r.runs_planned
        );
        match &r.summary {
            Some(s) => {
                let _ = write!(
                    out,
                    "{},{},{},{},{},{},{}",
                    s.n,
                    num(s.mean),
                    num(s.median),
                    num(s.q1),
                    num(s.q3),
                    num(s.min),
                    num(s.max)
                );
            }
            None => out.push_str("0,,,,,,"),
        }
        let _ = writeln!(out, ",{}", r.requests);
    }
    out
}

pub fn reductions_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from(
        "treatment,baseline,aggregator,baseline_mean,treatment_mean,reduction_pct,baseline_last_day,treatment_last_day,last_day_reduction_pct\n",
    );
    for r in &bundle.reductions {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            csv_field(&r.treatment),
            csv_field(&bundle.baseline),
            bundle.aggregator.key(),
            num(r.baseline_mean),
            num(r.treatment_mean),
            num(r.reduction_pct),
            num(r.baseline_last_day),
            num(r.treatment_last_day),
            num(r.last_day_reduction_pct)
        );
    }
    out
}

pub fn daily_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from("treatment,day,runs,mean,ci_low,ci_high\n");
    for r in &bundle.treatments {
        match &r.daily {
            Some(d) => {
                for p in &d.points {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        csv_field(r.label()),
                        p.day,
                        d.runs,
                        num(p.mean),
                        num(p.ci_low),
                        num(p.ci_high)
                    );
                }
            }
            None => {
                for (i, m) in r.daily_means().iter().enumerate() {
                    let _ = writeln!(out, "{},{},{},{},,", csv_field(r.label()), i + 1, r.runs.len(), num(*m));
                }
            }
        }
    }
    out
}

pub fn categories_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from("treatment,category,actions_per_nation_run,runs\n");
    for r in &bundle.treatments {
        let Some(c) = &r.categories else { continue };
        for cat in ActionCategory::ALL {
            let _ = writeln!(out, "{},{},{},{}", csv_field(r.label()), cat.key(), num(c.get(cat)), c.runs);
        }
    }
    out
}

pub fn significance_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from("treatment,baseline,test,statistic,p_value,significant_at_0_05,note\n");
    for row in &bundle.significance_rows {
        let (stat, p, sig) = match &row.result {
            Some(r) => (num(r.statistic), num(r.p_value), r.significant_at_0_05.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{stat},{p},{sig},{}",
            csv_field(&row.treatment),
            csv_field(&bundle.baseline),
            bundle.significance.key(),
            csv_field(row.note.as_deref().unwrap_or(""))
        );
    }
    out
}

pub fn provenance_json(bundle: &ReportBundle) -> String {
    let mut s = serde_json::to_string_pretty(&bundle.provenance).expect("provenance serializes");
    s.push('\n');
    s
}

fn label_list(list: &[&TreatmentReport]) -> Vec<(String, Summary<f64>)> {
    list.iter()
        .filter_map(|r| r.summary.map(|s| (r.label().to_string(), s)))
        .collect()
}

fn y_label(aggregator: Aggregator) -> &'static str {
    match aggregator {
        Aggregator::MeanDaily => "Escalation score (mean daily)",
        Aggregator::Day14Cumulative => "Escalation score (cumulative)",
    }
}

/// Temperature group: default-prompt treatments. Prompt group: the baseline
/// plus every treatment with a prompt extension.
fn groups(bundle: &ReportBundle) -> (Vec<&TreatmentReport>, Vec<&TreatmentReport>) {
    let with_data: Vec<&TreatmentReport> = bundle.treatments.iter().filter(|r| !r.runs.is_empty()).collect();
    let temperature: Vec<_> = with_data
        .iter()
        .copied()
        .filter(|r| r.treatment.variant == PromptVariant::Default)
        .collect();
    let prompt: Vec<_> = with_data
        .iter()
        .copied()
        .filter(|r| r.label() == bundle.baseline || r.treatment.variant != PromptVariant::Default)
        .collect();
    (temperature, prompt)
}

/// Figure SVG text keyed by file name. Figures that cannot be drawn from the
/// available runs are left out.
pub fn render_figures(bundle: &ReportBundle) -> Vec<(String, String)> {
    let prov = serde_json::to_string(&bundle.provenance).expect("provenance serializes");
    let ts = bundle.timestamp.as_deref();
    let ylab = y_label(bundle.aggregator);
    let (temperature, prompt) = groups(bundle);
    let mut out = Vec::new();
    let mut push = |name: &str, result: Result<String, FigureError>| match result {
        Ok(svg) => out.push((name.to_string(), svg)),
        Err(e) => tracing::warn!(figure = name, error = %e, "figure skipped"),
    };
    push(
        FIGURE_FILES[0],
        emit_boxplot("Escalation scores by temperature", ylab, &label_list(&temperature), &prov, ts),
    );
    push(
        FIGURE_FILES[1],
        emit_boxplot("Escalation scores by prompt variant", ylab, &label_list(&prompt), &prov, ts),
    );

    let lowest = |group: &[&TreatmentReport]| -> Option<String> {
        group
            .iter()
            .filter(|r| r.label() != bundle.baseline)
            .min_by(|a, b| {
                let (x, y) = (a.last_day_mean().unwrap_or(f64::MAX), b.last_day_mean().unwrap_or(f64::MAX));
                x.total_cmp(&y).then_with(|| a.label().cmp(b.label()))
            })
            .map(|r| r.label().to_string())
    };
    let mut picks = vec![bundle.baseline.clone()];
    for l in [lowest(&temperature), lowest(&prompt)].into_iter().flatten() {
        if !picks.contains(&l) {
            picks.push(l);
        }
    }
    let series: Vec<SeriesInput> = picks
        .iter()
        .filter_map(|l| bundle.treatment(l))
        .filter(|r| !r.runs.is_empty())
        .map(|r| match &r.daily {
            Some(d) => SeriesInput {
                label: r.label().to_string(),
                means: d.points.iter().map(|p| p.mean).collect(),
                band: Some(d.points.iter().map(|p| (p.ci_low, p.ci_high)).collect()),
            },
            None => SeriesInput {
                label: r.label().to_string(),
                means: r.daily_means(),
                band: None,
            },
        })
        .collect();
    push(
        FIGURE_FILES[2],
        emit_timeseries("Daily escalation score with 95% CI", "Mean daily score", &series, &prov, ts),
    );

    let counts: Vec<(String, BTreeMap<ActionCategory, f64>)> = bundle
        .treatments
        .iter()
        .filter_map(|r| r.categories.as_ref().map(|c| (r.label().to_string(), c.counts.clone())))
        .collect();
    push(
        FIGURE_FILES[3],
        emit_category_chart("Actions per nation per run by category", &counts, &prov, ts),
    );
    out
}

/// Writes every table, `provenance.json` and `figures/*.svg` under `out_dir`.
/// Returns the written paths.
pub fn write_report(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let figures = out_dir.join("figures");
    std::fs::create_dir_all(&figures).map_err(|e| io_err(&figures, e))?;
    let mut files: Vec<(PathBuf, String)> = vec![
        (out_dir.join("summary.csv"), summary_csv(bundle)),
        (out_dir.join("reductions.csv"), reductions_csv(bundle)),
        (out_dir.join("daily.csv"), daily_csv(bundle)),
        (out_dir.join("categories.csv"), categories_csv(bundle)),
        (out_dir.join("significance.csv"), significance_csv(bundle)),
        (out_dir.join("provenance.json"), provenance_json(bundle)),
    ];
    for (name, svg) in render_figures(bundle) {
        files.push((figures.join(name), svg));
    }
    let mut written = Vec::new();
    for (path, text) in files {
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Human-readable tables, numbers rounded to 2 decimals.
pub fn format_tables(bundle: &ReportBundle) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "aggregator: {}  quartiles: {}  baseline: {}",
        bundle.aggregator,
        stats::QUARTILE_CONVENTION,
        bundle.baseline
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<32} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "treatment", "runs", "mean", "median", "q1", "q3", "min", "max"
    );
    for r in &bundle.treatments {
        match &r.summary {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "{:<32} {:>5} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                    r.label(),
                    r.runs.len(),
                    s.mean,
                    s.median,
                    s.q1,
                    s.q3,
                    s.min,
                    s.max
                );
            }
            None => {
                let _ = writeln!(out, "{:<32} {:>5} {:>8}", r.label(), 0, "-");
            }
        }
    }
    if !bundle.reductions.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<32} {:>8} {:>11} {:>9} {:>13} {:>9}",
            "treatment", "mean", "reduction%", "last_day", "last_day_red%", "p"
        );
        for (r, s) in bundle.reductions.iter().zip(&bundle.significance_rows) {
            let p = s
                .result
                .map(|x| format!("{:.3}{}", x.p_value, if x.significant_at_0_05 { "*" } else { "" }))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<32} {:>8.2} {:>11.2} {:>9.2} {:>13.2} {:>9}",
                r.treatment, r.treatment_mean, r.reduction_pct, r.treatment_last_day, r.last_day_reduction_pct, p
            );
        }
    }
    out
}
