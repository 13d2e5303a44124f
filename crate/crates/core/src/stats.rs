//! Summary statistics, confidence bands and two-sample tests.
//!
//! Quartiles use linear interpolation between order statistics: the value at
//! probability `p` of a sorted sample `x[0..n]` is read at fractional index
//! `(n - 1) * p`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::num::Real;

pub const QUARTILE_CONVENTION: &str = "linear interpolation, index (n-1)p";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("baseline mean is zero")]
    ZeroBaseline,
    #[error("need at least 2 runs for a confidence interval, got {0}")]
    InsufficientRuns(usize),
    #[error("runs have different numbers of days")]
    RaggedSeries,
    #[error("need at least 3 values per sample, got {0} and {1}")]
    InsufficientSample(usize, usize),
    #[error("unknown test `{0}`")]
    UnknownTest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary<T> {
    pub mean: T,
    pub median: T,
    pub q1: T,
    pub q3: T,
    pub min: T,
    pub max: T,
    pub n: usize,
}

fn sorted<T: Real>(samples: &[T]) -> Result<Vec<T>, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok(v)
}

/// Value at probability `p` of an ascending, nonempty sample.
pub fn quantile_sorted<T: Real>(sorted: &[T], p: T) -> T {
    let h = T::from_usize_exact(sorted.len() - 1) * p;
    let lo = h.floor();
    let i = lo.to_usize().expect("index");
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i])
}

pub fn mean<T: Real>(samples: &[T]) -> Option<T> {
    if samples.is_empty() {
        return None;
    }
    let sum = samples.iter().fold(T::zero(), |a, &x| a + x);
    Some(sum / T::from_usize_exact(samples.len()))
}

/// Sample variance (divisor n - 1).
pub fn variance<T: Real>(samples: &[T]) -> Option<T> {
    if samples.len() < 2 {
        return None;
    }
    let m = mean(samples)?;
    let ss = samples.iter().fold(T::zero(), |a, &x| a + (x - m) * (x - m));
    Some(ss / T::from_usize_exact(samples.len() - 1))
}

pub fn summarize<T: Real>(samples: &[T]) -> Result<Summary<T>, StatsError> {
    let v = sorted(samples)?;
    let q = |p: f64| quantile_sorted(&v, T::from_f64_lossy(p));
    let mean = mean(&v).expect("nonempty");
    Ok(Summary {
        // clamp guards against rounding in the running sum
        mean: mean.max(v[0]).min(v[v.len() - 1]),
        median: q(0.5),
        q1: q(0.25),
        q3: q(0.75),
        min: v[0],
        max: v[v.len() - 1],
        n: v.len(),
    })
}

/// `100 * (baseline - treatment) / baseline`.
pub fn percent_reduction<T: Real>(baseline_mean: T, treatment_mean: T) -> Result<T, StatsError> {
    if baseline_mean == T::zero() {
        return Err(StatsError::ZeroBaseline);
    }
    Ok(T::from_f64_lossy(100.0) * (baseline_mean - treatment_mean) / baseline_mean)
}

/// Two-sided 95% Student-t critical value for `df` degrees of freedom.
pub fn t_critical_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("df > 0")
        .inverse_cdf(0.975)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DailyPoint<T> {
    pub day: u32,
    pub mean: T,
    pub ci_low: T,
    pub ci_high: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DailySeriesStats<T> {
    pub runs: usize,
    pub points: Vec<DailyPoint<T>>,
}

/// Per-day mean with a 95% t interval over runs. `per_run` is one row per run,
/// one column per day.
pub fn ci95_per_day<T: Real>(per_run: &[Vec<T>]) -> Result<DailySeriesStats<T>, StatsError> {
    let n = per_run.len();
    if n < 2 {
        return Err(StatsError::InsufficientRuns(n));
    }
    let days = per_run[0].len();
    if per_run.iter().any(|r| r.len() != days) {
        return Err(StatsError::RaggedSeries);
    }
    let t = T::from_f64_lossy(t_critical_975(n - 1));
    let sqrt_n = T::from_usize_exact(n).sqrt();
    let mut points = Vec::with_capacity(days);
    for d in 0..days {
        let column: Vec<T> = per_run.iter().map(|r| r[d]).collect();
        if column.iter().any(|x| !x.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        let m = mean(&column).expect("n >= 2");
        let half = t * variance(&column).expect("n >= 2").sqrt() / sqrt_n;
        points.push(DailyPoint {
            day: d as u32 + 1,
            mean: m,
            ci_low: m - half,
            ci_high: m + half,
        });
    }
    Ok(DailySeriesStats { runs: n, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceTest {
    /// Mann–Whitney U, normal approximation with tie and continuity correction.
    #[default]
    MannWhitney,
    /// Mann–Whitney U, exact permutation distribution (ties as midranks).
    MannWhitneyExact,
    /// Welch's unequal-variance t test.
    Welch,
}

impl SignificanceTest {
    pub fn key(self) -> &'static str {
        match self {
            SignificanceTest::MannWhitney => "mann_whitney",
            SignificanceTest::MannWhitneyExact => "mann_whitney_exact",
            SignificanceTest::Welch => "welch",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            SignificanceTest::MannWhitney => {
                "two-sided Mann-Whitney U, normal approximation with tie and continuity correction"
            }
            SignificanceTest::MannWhitneyExact => "two-sided Mann-Whitney U, exact permutation distribution",
            SignificanceTest::Welch => "two-sided Welch t test",
        }
    }
}

impl fmt::Display for SignificanceTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for SignificanceTest {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "mann_whitney" | "mwu" => Ok(Self::MannWhitney),
            "mann_whitney_exact" | "exact" => Ok(Self::MannWhitneyExact),
            "welch" | "welch_t" => Ok(Self::Welch),
            _ => Err(StatsError::UnknownTest(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignificanceResult<T> {
    pub test: SignificanceTest,
    /// U of the first sample for Mann–Whitney, t for Welch.
    pub statistic: T,
    pub p_value: T,
    pub significant_at_0_05: bool,
}

/// Ranks (1-based, ties averaged) of the pooled sample `a ++ b`, doubled so
/// they are integers.
fn doubled_ranks(a: &[f64], b: &[f64]) -> (Vec<u64>, Vec<u64>) {
    let mut pooled: Vec<(f64, usize)> = a.iter().chain(b).copied().zip(0..).collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite"));
    let mut ranks = vec![0u64; pooled.len()];
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, doubled
        let r2 = (i + 1 + j + 1) as u64;
        for p in &pooled[i..=j] {
            ranks[p.1] = r2;
        }
        i = j + 1;
    }
    let (ra, rb) = ranks.split_at(a.len());
    (ra.to_vec(), rb.to_vec())
}

fn tie_term(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    let mut total = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        total += t * t * t - t;
        i = j + 1;
    }
    total
}

/// U statistic of `a` against `b`: pairs (x in a, y in b) with x > y, plus
/// half the ties.
pub fn mann_whitney_u<T: Real>(a: &[T], b: &[T]) -> T {
    let a: Vec<f64> = a.iter().map(|x| x.to_f64_lossy()).collect();
    let b: Vec<f64> = b.iter().map(|x| x.to_f64_lossy()).collect();
    let (ra, _) = doubled_ranks(&a, &b);
    let r2: u64 = ra.iter().sum();
    let na = a.len() as f64;
    T::from_f64_lossy(r2 as f64 / 2.0 - na * (na + 1.0) / 2.0)
}

fn mw_normal_p(a: &[f64], b: &[f64], u: f64) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term(&pooled) / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let mu = na * nb / 2.0;
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - normal.cdf(z))).min(1.0)
}

/// Exact two-sided p: the share of all ways to split the pooled ranks into
/// groups of the observed sizes whose rank sum is at least as far from its
/// mean as the observed one.
fn mw_exact_p(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = doubled_ranks(a, b);
    let na = ra.len();
    let all: Vec<u64> = ra.iter().chain(&rb).copied().collect();
    let max_sum: u64 = all.iter().sum();
    // ways[k][s]: subsets of size k with doubled-rank sum s
    let mut ways = vec![vec![0f64; max_sum as usize + 1]; na + 1];
    ways[0][0] = 1.0;
    for &r in &all {
        for k in (1..=na).rev() {
            for s in (r as usize..=max_sum as usize).rev() {
                let add = ways[k - 1][s - r as usize];
                if add != 0.0 {
                    ways[k][s] += add;
                }
            }
        }
    }
    let n = all.len() as u64;
    // mean of the doubled rank sum
    let centre2 = na as i64 * (n as i64 + 1);
    let observed: u64 = ra.iter().sum();
    let dist = |s: u64| (s as i64 - centre2).abs();
    let d_obs = dist(observed);
    let total: f64 = ways[na].iter().sum();
    let extreme: f64 = ways[na]
        .iter()
        .enumerate()
        .filter(|(s, _)| dist(*s as u64) >= d_obs)
        .map(|(_, w)| *w)
        .sum();
    (extreme / total).min(1.0)
}

fn welch(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (ma, mb) = (mean(a).expect("n>=3"), mean(b).expect("n>=3"));
    let (va, vb) = (variance(a).expect("n>=3"), variance(b).expect("n>=3"));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return if ma == mb { (0.0, 1.0) } else { (f64::INFINITY.copysign(ma - mb), 0.0) };
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (t, (2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0))
}

pub fn significance_test<T: Real>(a: &[T], b: &[T], test: SignificanceTest) -> Result<SignificanceResult<T>, StatsError> {
    if a.len() < 3 || b.len() < 3 {
        return Err(StatsError::InsufficientSample(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let af: Vec<f64> = a.iter().map(|x| x.to_f64_lossy()).collect();
    let bf: Vec<f64> = b.iter().map(|x| x.to_f64_lossy()).collect();
    let (statistic, p) = match test {
        SignificanceTest::MannWhitney => {
            let u: f64 = mann_whitney_u(&af, &bf);
            (u, mw_normal_p(&af, &bf, u))
        }
        SignificanceTest::MannWhitneyExact => (mann_whitney_u(&af, &bf), mw_exact_p(&af, &bf)),
        SignificanceTest::Welch => welch(&af, &bf),
    };
    Ok(SignificanceResult {
        test,
        statistic: T::from_f64(statistic).unwrap_or_else(T::nan),
        p_value: T::from_f64_lossy(p),
        significant_at_0_05: p <= 0.05,
    })
}
