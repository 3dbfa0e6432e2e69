//! Efficiency scoring and the suite-level pass@k / eff@k estimators.
//!
//! Per-sample efficiency is a linear score between an upper threshold T
//! (no better than the unoptimized baseline) and the expert reference R:
//! a correct sample measuring R scores 1, anything at or above T scores 0,
//! incorrect samples score 0 regardless of measurement.
//!
//! pass@k is the standard unbiased estimator from n samples with c correct.
//! eff@k generalizes it to expectations of the best efficiency in a random
//! k-subset, computed in closed form over ascending order statistics:
//!
//! ```text
//! eff@k = sum_{r=k..n}  C(r-1, k-1) / C(n, k) * e_(r)
//! ```
//!
//! [`eff_at_k_bruteforce`] enumerates subsets directly and exists as the
//! independent oracle the closed form is tested against; it shares no code
//! with [`eff_at_k`].

use std::collections::BTreeMap;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::metric::{MetricKind, MetricVector};
use crate::problem_store::Difficulty;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("degenerate threshold: T = {t} must exceed R = {r}")]
    DegenerateThreshold { t: f64, r: f64 },
    #[error("k = {k} outside [1, {n}]")]
    InvalidK { k: usize, n: usize },
    #[error("correct count {c} exceeds sample count {n}")]
    InvalidCount { n: usize, c: usize },
    #[error("brute-force estimator limited to n <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error("score table is empty")]
    EmptySuite,
    #[error("malformed score table: {0}")]
    MalformedTable(String),
}

/// Per-problem scoring thresholds: T (score hits 0 at or above this) and
/// R (score hits 1 at this), per metric.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EffThresholds {
    pub t: MetricVector,
    pub r: MetricVector,
    pub clamp_to_unit: bool,
}

impl EffThresholds {
    /// Returns (T, R) for a metric, or an error when absent or degenerate.
    pub fn pair(&self, kind: MetricKind) -> Result<(f64, f64), MetricsError> {
        let (Some(t), Some(r)) = (self.t.get(kind), self.r.get(kind)) else {
            return Err(MetricsError::MalformedTable(format!(
                "no thresholds for metric `{kind}`"
            )));
        };
        if !(t > r) {
            return Err(MetricsError::DegenerateThreshold { t, r });
        }
        Ok((t, r))
    }

    pub fn score(
        &self,
        kind: MetricKind,
        measured: f64,
        correct: bool,
    ) -> Result<f64, MetricsError> {
        let (t, r) = self.pair(kind)?;
        efficiency_score(measured, t, r, correct, self.clamp_to_unit)
    }
}

/// Linear efficiency of one sample. Requires T > R; the degenerate case is
/// an error even for incorrect samples so misconfigured thresholds are never
/// silently scored.
pub fn efficiency_score(
    measured: f64,
    t: f64,
    r: f64,
    correct: bool,
    clamp_to_unit: bool,
) -> Result<f64, MetricsError> {
    if !(t > r) {
        return Err(MetricsError::DegenerateThreshold { t, r });
    }
    if !correct {
        return Ok(0.0);
    }
    let raw = (t - measured).max(0.0) / (t - r);
    Ok(if clamp_to_unit { raw.min(1.0) } else { raw })
}

/// Unbiased pass@k estimator from n samples with c correct, in the stable
/// product form (no factorials, exact for n up to at least 1e4).
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, MetricsError> {
    if c > n {
        return Err(MetricsError::InvalidCount { n, c });
    }
    if k < 1 || k > n {
        return Err(MetricsError::InvalidK { k, n });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut prod = 1.0f64;
    for i in 0..k {
        prod *= (n - c - i) as f64 / (n - i) as f64;
    }
    Ok(1.0 - prod)
}

/// Closed-form eff@k over one problem's per-sample efficiency list.
/// Weights are built by the descending recurrence w_n = k/n,
/// w_{r-1} = w_r * (r-k)/(r-1); every factor is in (0, 1], so nothing
/// overflows and the weights sum to 1.
pub fn eff_at_k(e: &[f64], k: usize) -> Result<f64, MetricsError> {
    let n = e.len();
    if k < 1 || k > n {
        return Err(MetricsError::InvalidK { k, n });
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::MalformedTable(
            "non-finite efficiency entry".into(),
        ));
    }
    let mut sorted = e.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut w = k as f64 / n as f64;
    let mut acc = 0.0f64;
    let mut r = n;
    loop {
        acc += w * sorted[r - 1];
        if r == k {
            break;
        }
        w *= (r - k) as f64 / (r - 1) as f64;
        r -= 1;
    }
    Ok(acc)
}

/// Test oracle for [`eff_at_k`]: averages `max` over every k-subset
/// explicitly. Deliberately independent of the closed form; refuses n > 20.
pub fn eff_at_k_bruteforce(e: &[f64], k: usize) -> Result<f64, MetricsError> {
    const MAX_N: usize = 20;
    let n = e.len();
    if n > MAX_N {
        return Err(MetricsError::TooLarge { n, max: MAX_N });
    }
    if k < 1 || k > n {
        return Err(MetricsError::InvalidK { k, n });
    }
    let mut sum = 0.0f64;
    let mut count = 0u64;
    for subset in (0..n).combinations(k) {
        let best = subset
            .iter()
            .map(|&i| e[i])
            .fold(f64::NEG_INFINITY, f64::max);
        sum += best;
        count += 1;
    }
    Ok(sum / count as f64)
}

/// Scores for one problem's samples targeted at one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricGroup {
    /// Correct samples among the n drawn for this target metric.
    pub c: usize,
    /// Per-sample efficiency, length n; incorrect samples contribute 0.
    pub e: Vec<f64>,
    /// True when thresholds for this metric were degenerate or missing;
    /// the group is then excluded from eff@k instead of silently scored.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemScores {
    pub problem_id: String,
    pub difficulty: Difficulty,
    /// Samples drawn per target metric.
    pub n: usize,
    pub groups: BTreeMap<MetricKind, MetricGroup>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub problems: Vec<ProblemScores>,
}

/// Aggregates for one k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KScores {
    /// Mean over problems of the per-problem pass@k (itself averaged over
    /// that problem's target-metric groups).
    pub pass: f64,
    /// pass@k restricted to each metric's own sample group.
    pub pass_by_metric: MetricVector,
    /// eff@k per metric; `None` when no problem has a scoreable group.
    pub eff: MetricVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteScores {
    pub ks: Vec<usize>,
    pub problem_count: usize,
    pub overall: BTreeMap<usize, KScores>,
    pub by_difficulty: BTreeMap<Difficulty, BTreeMap<usize, KScores>>,
    /// (problem id, metric) pairs excluded for degenerate thresholds.
    pub degenerate: Vec<(String, MetricKind)>,
}

fn validate_table(table: &ScoreTable) -> Result<(), MetricsError> {
    if table.problems.is_empty() {
        return Err(MetricsError::EmptySuite);
    }
    for p in &table.problems {
        if p.groups.is_empty() {
            return Err(MetricsError::MalformedTable(format!(
                "problem `{}` has no sample groups",
                p.problem_id
            )));
        }
        for (kind, g) in &p.groups {
            if g.c > p.n {
                return Err(MetricsError::InvalidCount { n: p.n, c: g.c });
            }
            if !g.degenerate && g.e.len() != p.n {
                return Err(MetricsError::MalformedTable(format!(
                    "problem `{}` metric `{kind}`: e-list length {} != n = {}",
                    p.problem_id,
                    g.e.len(),
                    p.n
                )));
            }
            if g.e.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(MetricsError::MalformedTable(format!(
                    "problem `{}` metric `{kind}`: negative or non-finite efficiency",
                    p.problem_id
                )));
            }
        }
    }
    Ok(())
}

fn k_scores_for(problems: &[&ProblemScores], k: usize) -> Result<KScores, MetricsError> {
    let mut pass_sum = 0.0;
    for p in problems {
        let mut group_sum = 0.0;
        for g in p.groups.values() {
            group_sum += pass_at_k(p.n, g.c, k)?;
        }
        pass_sum += group_sum / p.groups.len() as f64;
    }
    let mut pass_by_metric = MetricVector::EMPTY;
    let mut eff = MetricVector::EMPTY;
    for kind in MetricKind::ALL {
        let mut p_sum = 0.0;
        let mut p_cnt = 0usize;
        let mut e_sum = 0.0;
        let mut e_cnt = 0usize;
        for p in problems {
            if let Some(g) = p.groups.get(&kind) {
                p_sum += pass_at_k(p.n, g.c, k)?;
                p_cnt += 1;
                if !g.degenerate {
                    e_sum += eff_at_k(&g.e, k)?;
                    e_cnt += 1;
                }
            }
        }
        if p_cnt > 0 {
            pass_by_metric.set(kind, Some(p_sum / p_cnt as f64));
        }
        if e_cnt > 0 {
            eff.set(kind, Some(e_sum / e_cnt as f64));
        }
    }
    Ok(KScores {
        pass: pass_sum / problems.len() as f64,
        pass_by_metric,
        eff,
    })
}

/// Suite-level aggregation: pass@k and per-metric eff@k for every requested
/// k, overall and broken down by difficulty. Every k must satisfy
/// 1 <= k <= min over problems of n.
pub fn score_suite(table: &ScoreTable, ks: &[usize]) -> Result<SuiteScores, MetricsError> {
    validate_table(table)?;
    if ks.is_empty() {
        return Err(MetricsError::MalformedTable("no k values requested".into()));
    }
    let min_n = table.problems.iter().map(|p| p.n).min().unwrap_or(0);
    for &k in ks {
        if k < 1 || k > min_n {
            return Err(MetricsError::InvalidK { k, n: min_n });
        }
    }

    let all: Vec<&ProblemScores> = table.problems.iter().collect();
    let mut overall = BTreeMap::new();
    for &k in ks {
        overall.insert(k, k_scores_for(&all, k)?);
    }

    let mut by_difficulty = BTreeMap::new();
    for diff in [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard] {
        let subset: Vec<&ProblemScores> = table
            .problems
            .iter()
            .filter(|p| p.difficulty == diff)
            .collect();
        if subset.is_empty() {
            continue;
        }
        let mut per_k = BTreeMap::new();
        for &k in ks {
            per_k.insert(k, k_scores_for(&subset, k)?);
        }
        by_difficulty.insert(diff, per_k);
    }

    let mut degenerate = Vec::new();
    for p in &table.problems {
        for (kind, g) in &p.groups {
            if g.degenerate {
                degenerate.push((p.problem_id.clone(), *kind));
            }
        }
    }

    Ok(SuiteScores {
        ks: ks.to_vec(),
        problem_count: table.problems.len(),
        overall,
        by_difficulty,
        degenerate,
    })
}
