//! Report emission: score tables, per-problem detail, quadrant and Pareto
//! classifications, and paired before/after metric distributions.
//!
//! Every emitter is a pure function from already-computed results to a
//! string, with all map-backed ordering fixed, so identical inputs always
//! produce byte-identical artifacts. Values are printed with three
//! decimals; metrics with no defined value print as `na`, never as zero.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codegen::Formulation;
use crate::metric::MetricKind;
use crate::metrics::SuiteScores;
use crate::problem_store::Difficulty;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("empty suite: nothing to report")]
    EmptySuite,
    #[error("problem {problem} metric {metric}: after-value has no baseline to pair with")]
    UnpairedProblem { problem: String, metric: MetricKind },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
    Json,
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => fmt3(v),
        None => "na".to_string(),
    }
}

fn score_columns(ks: &[usize]) -> Vec<String> {
    let mut cols = Vec::new();
    for k in ks {
        cols.push(format!("pass@{k}"));
        for m in MetricKind::ALL {
            cols.push(format!("eff@{k}:{m}"));
        }
    }
    cols
}

fn score_cells(scores: &BTreeMap<usize, crate::metrics::KScores>, ks: &[usize]) -> Vec<String> {
    let mut cells = Vec::new();
    for k in ks {
        match scores.get(k) {
            Some(s) => {
                cells.push(fmt3(s.pass));
                for m in MetricKind::ALL {
                    cells.push(fmt_opt(s.eff.get(m)));
                }
            }
            None => {
                cells.push("na".into());
                for _ in MetricKind::ALL {
                    cells.push("na".into());
                }
            }
        }
    }
    cells
}

/// Serializes suite-level scores. The CSV layout is one `all` row plus one
/// row per difficulty present, with `pass@k` and per-metric `eff@k`
/// columns for every requested k.
pub fn emit_score_table(scores: &SuiteScores, format: TableFormat) -> Result<String, ReportError> {
    if scores.problem_count == 0 {
        return Err(ReportError::EmptySuite);
    }
    match format {
        TableFormat::Json => {
            let mut text = serde_json::to_string_pretty(scores)
                .expect("suite scores always serialize");
            text.push('\n');
            Ok(text)
        }
        TableFormat::Csv => {
            let mut out = String::new();
            out.push_str("scope,");
            out.push_str(&score_columns(&scores.ks).join(","));
            out.push('\n');
            out.push_str("all,");
            out.push_str(&score_cells(&scores.overall, &scores.ks).join(","));
            out.push('\n');
            for (difficulty, by_k) in &scores.by_difficulty {
                out.push_str(&format!("difficulty:{difficulty},"));
                out.push_str(&score_cells(by_k, &scores.ks).join(","));
                out.push('\n');
            }
            Ok(out)
        }
        TableFormat::Markdown => {
            let cols = score_columns(&scores.ks);
            let mut out = String::new();
            out.push_str(&format!("| scope | {} |\n", cols.join(" | ")));
            out.push_str(&format!("|---{}|\n", "|---".repeat(cols.len())));
            out.push_str(&format!(
                "| all | {} |\n",
                score_cells(&scores.overall, &scores.ks).join(" | ")
            ));
            for (difficulty, by_k) in &scores.by_difficulty {
                out.push_str(&format!(
                    "| {difficulty} | {} |\n",
                    score_cells(by_k, &scores.ks).join(" | ")
                ));
            }
            Ok(out)
        }
    }
}

/// Quadrant classification of one problem by its k=1 statistics.
/// Thresholds are strict: a point sitting exactly on one stays in the
/// lower class.
pub fn quadrant_label(
    pass: f64,
    eff: f64,
    pass_threshold: f64,
    eff_threshold: f64,
) -> &'static str {
    match (pass > pass_threshold, eff > eff_threshold) {
        (true, true) => "correct-efficient",
        (true, false) => "correct-inefficient",
        (false, true) => "efficient-incorrect",
        (false, false) => "incorrect-inefficient",
    }
}

pub const DEFAULT_QUADRANT_PASS_THRESHOLD: f64 = 0.5;
pub const DEFAULT_QUADRANT_EFF_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadrantPoint {
    pub id: String,
    pub pass: f64,
    pub eff: f64,
}

pub fn emit_quadrant_data(
    points: &[QuadrantPoint],
    pass_threshold: f64,
    eff_threshold: f64,
) -> String {
    let mut out = String::from("problem,pass_at_1,eff_at_1,quadrant\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.id,
            fmt3(p.pass),
            fmt3(p.eff),
            quadrant_label(p.pass, p.eff, pass_threshold, eff_threshold)
        ));
    }
    out
}

/// Marks dominated points in a minimize-both objective space: a point is
/// dominated when some other point is no worse on both axes and strictly
/// better on at least one. Duplicate points do not dominate each other.
pub fn dominated_flags(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .map(|p| {
            points.iter().any(|q| {
                q.0 <= p.0 && q.1 <= p.1 && (q.0 < p.0 || q.1 < p.1)
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

/// CSV of points in an (x, y) minimize-both space with Pareto status.
pub fn emit_pareto_data(points: &[ParetoPoint], x_name: &str, y_name: &str) -> String {
    let coords: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
    let dominated = dominated_flags(&coords);
    let mut out = format!("label,{x_name},{y_name},status\n");
    for (p, d) in points.iter().zip(dominated) {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.label,
            fmt3(p.x),
            fmt3(p.y),
            if d { "dominated" } else { "pareto" }
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionRow {
    pub problem_id: String,
    pub metric: MetricKind,
    pub before: f64,
    pub after: f64,
}

/// Pairs baseline measurements with best-candidate measurements. Problems
/// that produced no measurable candidate are simply absent; an after-value
/// whose baseline is missing is an error because the comparison would be
/// meaningless.
pub fn pair_distributions(
    before: &BTreeMap<(String, MetricKind), f64>,
    after: &BTreeMap<(String, MetricKind), f64>,
) -> Result<Vec<DistributionRow>, ReportError> {
    let mut rows = Vec::new();
    for ((problem, metric), after_v) in after {
        let before_v = before.get(&(problem.clone(), *metric)).ok_or_else(|| {
            ReportError::UnpairedProblem { problem: problem.clone(), metric: *metric }
        })?;
        rows.push(DistributionRow {
            problem_id: problem.clone(),
            metric: *metric,
            before: *before_v,
            after: *after_v,
        });
    }
    Ok(rows)
}

/// CSV of paired before/after values plus one mean-reduction summary row
/// per metric that has data.
pub fn emit_distribution_data(rows: &[DistributionRow]) -> String {
    let mut out = String::from("problem,metric,baseline,best_candidate,reduction_pct\n");
    let mut by_metric: BTreeMap<MetricKind, Vec<f64>> = BTreeMap::new();
    for r in rows {
        let reduction = if r.before != 0.0 {
            (r.before - r.after) / r.before * 100.0
        } else {
            0.0
        };
        by_metric.entry(r.metric).or_default().push(reduction);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.problem_id,
            r.metric,
            fmt3(r.before),
            fmt3(r.after),
            format_args!("{reduction:.1}")
        ));
    }
    for (metric, reductions) in by_metric {
        let mean = reductions.iter().sum::<f64>() / reductions.len() as f64;
        out.push_str(&format!("mean,{metric},na,na,{mean:.1}\n"));
    }
    out
}

/// Per-problem, per-metric detail used by the long-form report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub correct: usize,
    pub degenerate: bool,
    /// Histogram of outcome labels (sim verdicts plus extraction failures).
    pub verdicts: BTreeMap<String, usize>,
    pub mean_e: f64,
    pub best_e: f64,
    /// Baseline measurement (the efficiency threshold) when available.
    pub threshold: Option<f64>,
    /// Reference measurement when available.
    pub reference: Option<f64>,
    /// Best (lowest) measurement among correct candidates.
    pub best_measured: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRow {
    pub problem_id: String,
    pub difficulty: Difficulty,
    pub n: usize,
    pub per_metric: BTreeMap<MetricKind, MetricRow>,
}

impl ProblemRow {
    /// k=1 pass statistic: mean over metric groups of c/n.
    pub fn pass_at_1(&self) -> f64 {
        if self.per_metric.is_empty() || self.n == 0 {
            return 0.0;
        }
        let sum: f64 = self
            .per_metric
            .values()
            .map(|m| m.correct as f64 / self.n as f64)
            .sum();
        sum / self.per_metric.len() as f64
    }

    /// k=1 efficiency statistic: mean over non-degenerate metric groups of
    /// the mean sample efficiency.
    pub fn eff_at_1(&self) -> f64 {
        let usable: Vec<f64> = self
            .per_metric
            .values()
            .filter(|m| !m.degenerate)
            .map(|m| m.mean_e)
            .collect();
        if usable.is_empty() {
            return 0.0;
        }
        usable.iter().sum::<f64>() / usable.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub created_unix: u64,
    pub tool_version: String,
    pub suite_name: String,
    pub formulation: Formulation,
    /// Human-readable configuration labels (backend, sim mode, endpoint,
    /// sample count, ...), already stringified.
    pub config: BTreeMap<String, String>,
    pub scores: SuiteScores,
    pub problems: Vec<ProblemRow>,
}

/// Long-form Markdown report.
pub fn render_markdown(report: &RunReport) -> Result<String, ReportError> {
    let mut out = String::new();
    out.push_str(&format!("# Efficiency evaluation: {}\n\n", report.suite_name));
    out.push_str(&format!(
        "Run `{}`, tool v{}, formulation `{}`.\n\n",
        report.run_id, report.tool_version, report.formulation
    ));

    out.push_str("## Configuration\n\n");
    for (key, value) in &report.config {
        out.push_str(&format!("- {key}: `{value}`\n"));
    }
    out.push('\n');

    out.push_str("## Scores\n\n");
    out.push_str(&emit_score_table(&report.scores, TableFormat::Markdown)?);
    out.push('\n');

    if !report.scores.degenerate.is_empty() {
        out.push_str("## Degenerate thresholds\n\n");
        out.push_str(
            "Efficiency is undefined where the baseline does not measure \
             strictly worse than the reference; these combinations are \
             excluded from eff@k and listed here instead of being scored.\n\n",
        );
        for (problem, metric) in &report.scores.degenerate {
            out.push_str(&format!("- {problem}: {metric}\n"));
        }
        out.push('\n');
    }

    out.push_str("## Problems\n\n");
    out.push_str("| problem | difficulty | n | metric | correct | mean e | best e | baseline | best measured | outcomes |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for p in &report.problems {
        for (metric, row) in &p.per_metric {
            let outcomes = row
                .verdicts
                .iter()
                .map(|(label, count)| format!("{label}:{count}"))
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                p.problem_id,
                p.difficulty,
                p.n,
                metric,
                if row.degenerate { "degenerate".to_string() } else { row.correct.to_string() },
                fmt3(row.mean_e),
                fmt3(row.best_e),
                fmt_opt(row.threshold),
                fmt_opt(row.best_measured),
                outcomes,
            ));
        }
    }
    out.push('\n');
    Ok(out)
}

/// Writes the standard artifact set for a finished run and returns the
/// paths written: report.md, scores.csv, scores.json, quadrant.csv, and
/// distributions.csv.
pub fn write_run_outputs(dir: &Path, report: &RunReport) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| ReportError::Io { path: dir.to_path_buf(), source: e })?;
    let mut written = Vec::new();
    let mut emit = |name: &str, contents: String| -> Result<(), ReportError> {
        let path = dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| ReportError::Io { path: path.clone(), source: e })?;
        written.push(path);
        Ok(())
    };

    emit("report.md", render_markdown(report)?)?;
    emit("scores.csv", emit_score_table(&report.scores, TableFormat::Csv)?)?;
    emit("scores.json", emit_score_table(&report.scores, TableFormat::Json)?)?;

    let points: Vec<QuadrantPoint> = report
        .problems
        .iter()
        .map(|p| QuadrantPoint {
            id: p.problem_id.clone(),
            pass: p.pass_at_1(),
            eff: p.eff_at_1(),
        })
        .collect();
    emit(
        "quadrant.csv",
        emit_quadrant_data(
            &points,
            DEFAULT_QUADRANT_PASS_THRESHOLD,
            DEFAULT_QUADRANT_EFF_THRESHOLD,
        ),
    )?;

    let mut before = BTreeMap::new();
    let mut after = BTreeMap::new();
    for p in &report.problems {
        for (metric, row) in &p.per_metric {
            if let Some(t) = row.threshold {
                before.insert((p.problem_id.clone(), *metric), t);
                if let Some(best) = row.best_measured {
                    after.insert((p.problem_id.clone(), *metric), best);
                }
            }
        }
    }
    let rows = pair_distributions(&before, &after)?;
    emit("distributions.csv", emit_distribution_data(&rows))?;

    Ok(written)
}
