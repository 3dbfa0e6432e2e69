//! End-to-end run orchestration.
//!
//! A run walks fixed stages: measure thresholds (synthesize the baseline
//! and references), generate candidates, simulate the ones that produced
//! code, synthesize the ones that passed simulation, then assemble the
//! score table and emit reports. Every unit of work is written to the
//! JSONL log under a stable key before the run moves on, so a killed run
//! resumes by skipping the keys already present. The log is bound to a
//! hash of the full run configuration; a log written under a different
//! configuration refuses to resume rather than mixing results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ablation::DesignRole;
use crate::codegen::{
    self, CandidateSample, ChatEndpoint, EndpointError, ExtractionStatus, Formulation,
    GenerationConfig,
};
use crate::config::CorrectnessRule;
use crate::exec;
use crate::metric::{MetricKind, MetricVector};
use crate::metrics::{self, MetricGroup, MetricsError, ProblemScores, ScoreTable, SuiteScores};
use crate::problem_store::{self, StoreError, Suite, ThresholdPolicy, ThresholdPolicyKind};
use crate::record::{self, Record, RecordError, RecordLog};
use crate::report::{self, MetricRow, ProblemRow, ReportError, RunReport};
use crate::sim::{SimEnvError, SimMode, SimStatus, SimVerdict};
use crate::synth::{self, SynthBackend, SynthEnvError, SynthOutcome};

pub const META_KEY: &str = "meta";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub suite_path: PathBuf,
    pub formulation: Formulation,
    pub generation: GenerationConfig,
    /// Metrics the run optimizes for; each gets its own sample group.
    pub target_metrics: Vec<MetricKind>,
    pub ks: Vec<usize>,
    pub backend: SynthBackend,
    pub sim: SimMode,
    pub correctness: CorrectnessRule,
    pub clamp_to_unit: bool,
    pub jobs: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        self.generation.validate().map_err(RunError::Invalid)?;
        if self.target_metrics.is_empty() {
            return Err(RunError::Invalid("target_metrics is empty".into()));
        }
        for (i, m) in self.target_metrics.iter().enumerate() {
            if self.target_metrics[..i].contains(m) {
                return Err(RunError::Invalid(format!("duplicate target metric `{m}`")));
            }
        }
        if self.ks.is_empty() {
            return Err(RunError::Invalid("ks is empty".into()));
        }
        let n = self.generation.samples_per_problem;
        for (i, &k) in self.ks.iter().enumerate() {
            if k < 1 || k > n {
                return Err(RunError::Invalid(format!(
                    "k = {k} outside 1..={n} (samples_per_problem)"
                )));
            }
            if self.ks[..i].contains(&k) {
                return Err(RunError::Invalid(format!("duplicate k = {k}")));
            }
        }
        if self.jobs == 0 {
            return Err(RunError::Invalid("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Identity of a run configuration; records carry it and resume requires
/// an exact match.
pub fn config_hash(cfg: &RunConfig) -> String {
    let json = serde_json::to_string(cfg).expect("run config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    SimEnv(#[from] SimEnvError),
    #[error(transparent)]
    SynthEnv(#[from] SynthEnvError),
    #[error(transparent)]
    Endpoint(EndpointError),
    #[error("run log {path} was written by a different configuration")]
    ConfigMismatch { path: PathBuf },
    #[error("run log is incomplete: {count} records missing (e.g. {examples:?}); rerun with the same configuration to fill them")]
    IncompleteRun { count: usize, examples: Vec<String> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Process exit code for an error: 2 for environment problems (missing
/// tools, unreachable or unauthenticated endpoint), 1 for evaluation
/// failures.
pub fn exit_code(err: &RunError) -> i32 {
    match err {
        RunError::SimEnv(SimEnvError::SimulatorNotFound(_)) => 2,
        RunError::SynthEnv(SynthEnvError::BackendNotInstalled(_)) => 2,
        RunError::Endpoint(e) if e.is_fatal() => 2,
        _ => 1,
    }
}

pub fn threshold_key(problem: &str, role: DesignRole) -> String {
    format!("t|{problem}|{role}")
}

pub fn sample_key(problem: &str, f: Formulation, m: MetricKind, j: usize) -> String {
    format!("s|{problem}|{f}|{m}|{j}")
}

pub fn sim_key(problem: &str, f: Formulation, m: MetricKind, j: usize) -> String {
    format!("v|{problem}|{f}|{m}|{j}")
}

pub fn synth_key(problem: &str, f: Formulation, m: MetricKind, j: usize) -> String {
    format!("y|{problem}|{f}|{m}|{j}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaPayload {
    pub config: RunConfig,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPayload {
    pub role: DesignRole,
    pub outcome: SynthOutcome,
}

fn decode<T: serde::de::DeserializeOwned>(record: &Record) -> Result<T, RunError> {
    serde_json::from_value(record.payload.clone())
        .map_err(|e| RunError::Invalid(format!("record `{}` does not decode: {e}", record.key)))
}

#[derive(Debug)]
pub struct OpenedRun {
    pub suite: Suite,
    pub hash: String,
    pub records: BTreeMap<String, Record>,
    log: RecordLog,
}

impl OpenedRun {
    fn append(&mut self, stage: &str, key: String, payload: serde_json::Value) -> Result<(), RunError> {
        let record = Record {
            stage: stage.into(),
            key: key.clone(),
            config_hash: self.hash.clone(),
            payload,
        };
        self.log
            .append(&record)
            .map_err(|e| RunError::Io { path: self.log.path().to_path_buf(), source: e })?;
        self.records.insert(key, record);
        Ok(())
    }
}

/// Loads the suite, validates the configuration, and opens the log,
/// repairing a torn tail and checking that every existing record belongs
/// to this exact configuration.
pub fn open_run(cfg: &RunConfig, log_path: &Path) -> Result<OpenedRun, RunError> {
    cfg.validate()?;
    let suite = problem_store::load_suite(&cfg.suite_path)?;
    let hash = config_hash(cfg);
    let mut records = BTreeMap::new();
    if log_path.exists() {
        record::repair_log(log_path)?;
        for r in record::read_records(log_path)?.records {
            if r.config_hash != hash {
                return Err(RunError::ConfigMismatch { path: log_path.to_path_buf() });
            }
            records.insert(r.key.clone(), r);
        }
    }
    let log = RecordLog::append_to(log_path)
        .map_err(|e| RunError::Io { path: log_path.to_path_buf(), source: e })?;
    let mut opened = OpenedRun { suite, hash, records, log };
    if !opened.records.contains_key(META_KEY) {
        let payload = serde_json::to_value(MetaPayload {
            config: cfg.clone(),
            tool_version: report::TOOL_VERSION.into(),
        })
        .expect("meta payload serializes");
        opened.append("meta", META_KEY.into(), payload)?;
    }
    Ok(opened)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageProgress {
    pub executed: usize,
    pub reused: usize,
}

pub type Progress = BTreeMap<&'static str, StageProgress>;

fn role_for_metric(kind: MetricKind) -> DesignRole {
    match kind {
        MetricKind::Area => DesignRole::OptArea,
        MetricKind::Delay => DesignRole::OptDelay,
        MetricKind::Power => DesignRole::OptPower,
    }
}

/// Synthesizes the baseline and the three references of every bundle under
/// the run's backend; their measurements are the efficiency anchors.
fn run_thresholds(
    cfg: &RunConfig,
    opened: &mut OpenedRun,
    progress: &mut Progress,
) -> Result<(), RunError> {
    let stat = progress.entry("thresholds").or_default();
    for bi in 0..opened.suite.bundles.len() {
        for role in DesignRole::ALL {
            let key = threshold_key(&opened.suite.bundles[bi].id, role);
            if opened.records.contains_key(&key) {
                stat.reused += 1;
                continue;
            }
            let outcome = {
                let bundle = &opened.suite.bundles[bi];
                synth::synthesize(role.source(bundle), &cfg.backend)?
            };
            let payload = serde_json::to_value(ThresholdPayload { role, outcome })
                .expect("threshold payload serializes");
            opened.append("threshold", key, payload)?;
            stat.executed += 1;
        }
    }
    Ok(())
}

/// Generates every missing sample, one request per (problem, target
/// metric, index). Fatal endpoint errors abort after persisting whatever
/// completed; per-request failures were already converted into
/// request-failed samples by the retry loop.
fn run_samples(
    cfg: &RunConfig,
    endpoint: &dyn ChatEndpoint,
    opened: &mut OpenedRun,
    progress: &mut Progress,
) -> Result<(), RunError> {
    let mut stat = StageProgress::default();
    let mut pending: Vec<(usize, MetricKind, usize)> = Vec::new();
    for (bi, bundle) in opened.suite.bundles.iter().enumerate() {
        for &m in &cfg.target_metrics {
            for j in 0..cfg.generation.samples_per_problem {
                if opened.records.contains_key(&sample_key(&bundle.id, cfg.formulation, m, j)) {
                    stat.reused += 1;
                } else {
                    pending.push((bi, m, j));
                }
            }
        }
    }

    let OpenedRun { suite, hash, records, log } = opened;
    let worker = |(bi, m, j): (usize, MetricKind, usize)| {
        let gen_cfg = cfg.generation.with_target(m);
        codegen::generate_one(endpoint, &gen_cfg, &suite.bundles[bi], cfg.formulation, j)
    };
    let mut io_error: Option<std::io::Error> = None;
    let mut fatal: Option<EndpointError> = None;
    exec::parallel_for_each(cfg.jobs, pending, &worker, |_, result| {
        if io_error.is_some() {
            return;
        }
        match result {
            Ok(sample) => {
                let key = sample_key(
                    &sample.problem_id,
                    sample.formulation,
                    sample.target_metric,
                    sample.sample_index,
                );
                let record = Record {
                    stage: "sample".into(),
                    key: key.clone(),
                    config_hash: hash.clone(),
                    payload: serde_json::to_value(&sample).expect("samples serialize"),
                };
                match log.append(&record) {
                    Ok(()) => {
                        records.insert(key, record);
                        stat.executed += 1;
                    }
                    Err(e) => io_error = Some(e),
                }
            }
            Err(e) => {
                if fatal.is_none() {
                    fatal = Some(e);
                }
            }
        }
    });
    progress.insert("samples", stat);
    if let Some(e) = io_error {
        return Err(RunError::Io { path: log.path().to_path_buf(), source: e });
    }
    if let Some(e) = fatal {
        return Err(RunError::Endpoint(e));
    }
    Ok(())
}

struct SimItem {
    problem_id: String,
    metric: MetricKind,
    index: usize,
    src: String,
    bundle_index: usize,
}

/// Simulates every extracted candidate that has no verdict yet. Samples
/// without recovered code are not simulated; they score zero directly.
fn run_sims(cfg: &RunConfig, opened: &mut OpenedRun, progress: &mut Progress) -> Result<(), RunError> {
    let mut stat = StageProgress::default();
    let mut pending: Vec<SimItem> = Vec::new();
    for (bi, bundle) in opened.suite.bundles.iter().enumerate() {
        for &m in &cfg.target_metrics {
            for j in 0..cfg.generation.samples_per_problem {
                let Some(sample_rec) =
                    opened.records.get(&sample_key(&bundle.id, cfg.formulation, m, j))
                else {
                    continue;
                };
                let sample: CandidateSample = decode(sample_rec)?;
                if !sample.extraction_status.has_source() {
                    continue;
                }
                if opened.records.contains_key(&sim_key(&bundle.id, cfg.formulation, m, j)) {
                    stat.reused += 1;
                    continue;
                }
                pending.push(SimItem {
                    problem_id: bundle.id.clone(),
                    metric: m,
                    index: j,
                    src: sample.extracted_src.expect("status implies source"),
                    bundle_index: bi,
                });
            }
        }
    }

    let OpenedRun { suite, hash, records, log } = opened;
    let worker = |item: SimItem| {
        let key = sim_key(&item.problem_id, cfg.formulation, item.metric, item.index);
        (key, cfg.sim.run(&item.src, &suite.bundles[item.bundle_index]))
    };
    let mut io_error: Option<std::io::Error> = None;
    let mut env_error: Option<SimEnvError> = None;
    exec::parallel_for_each(cfg.jobs, pending, &worker, |_, (key, result)| {
        if io_error.is_some() {
            return;
        }
        match result {
            Ok(verdict) => {
                let record = Record {
                    stage: "sim".into(),
                    key: key.clone(),
                    config_hash: hash.clone(),
                    payload: serde_json::to_value(&verdict).expect("verdicts serialize"),
                };
                match log.append(&record) {
                    Ok(()) => {
                        records.insert(key, record);
                        stat.executed += 1;
                    }
                    Err(e) => io_error = Some(e),
                }
            }
            Err(e) => {
                if env_error.is_none() {
                    env_error = Some(e);
                }
            }
        }
    });
    progress.insert("sim", stat);
    if let Some(e) = io_error {
        return Err(RunError::Io { path: log.path().to_path_buf(), source: e });
    }
    if let Some(e) = env_error {
        return Err(RunError::SimEnv(e));
    }
    Ok(())
}

/// Synthesizes every candidate that passed simulation and has no
/// measurement yet.
fn run_synths(cfg: &RunConfig, opened: &mut OpenedRun, progress: &mut Progress) -> Result<(), RunError> {
    let mut stat = StageProgress::default();
    let mut pending: Vec<(String, String)> = Vec::new();
    for bundle in &opened.suite.bundles {
        for &m in &cfg.target_metrics {
            for j in 0..cfg.generation.samples_per_problem {
                let Some(sim_rec) =
                    opened.records.get(&sim_key(&bundle.id, cfg.formulation, m, j))
                else {
                    continue;
                };
                let verdict: SimVerdict = decode(sim_rec)?;
                if verdict.status != SimStatus::Pass {
                    continue;
                }
                if opened.records.contains_key(&synth_key(&bundle.id, cfg.formulation, m, j)) {
                    stat.reused += 1;
                    continue;
                }
                let sample_rec = opened
                    .records
                    .get(&sample_key(&bundle.id, cfg.formulation, m, j))
                    .expect("sim verdicts only exist for recorded samples");
                let sample: CandidateSample = decode(sample_rec)?;
                pending.push((
                    synth_key(&bundle.id, cfg.formulation, m, j),
                    sample.extracted_src.expect("simulated samples have source"),
                ));
            }
        }
    }

    let OpenedRun { hash, records, log, .. } = opened;
    let worker =
        |(key, src): (String, String)| (key, synth::synthesize(&src, &cfg.backend));
    let mut io_error: Option<std::io::Error> = None;
    let mut env_error: Option<SynthEnvError> = None;
    exec::parallel_for_each(cfg.jobs, pending, &worker, |_, (key, result)| {
        if io_error.is_some() {
            return;
        }
        match result {
            Ok(outcome) => {
                let record = Record {
                    stage: "synth".into(),
                    key: key.clone(),
                    config_hash: hash.clone(),
                    payload: serde_json::to_value(&outcome).expect("outcomes serialize"),
                };
                match log.append(&record) {
                    Ok(()) => {
                        records.insert(key, record);
                        stat.executed += 1;
                    }
                    Err(e) => io_error = Some(e),
                }
            }
            Err(e) => {
                if env_error.is_none() {
                    env_error = Some(e);
                }
            }
        }
    });
    progress.insert("synth", stat);
    if let Some(e) = io_error {
        return Err(RunError::Io { path: log.path().to_path_buf(), source: e });
    }
    if let Some(e) = env_error {
        return Err(RunError::SynthEnv(e));
    }
    Ok(())
}

/// Builds the score table and the per-problem report rows from recorded
/// results only; no work is recomputed here. Missing records are collected
/// and reported together so one rerun can fill all of them.
pub fn assemble_table(
    cfg: &RunConfig,
    suite: &Suite,
    records: &BTreeMap<String, Record>,
) -> Result<(ScoreTable, Vec<ProblemRow>), RunError> {
    let n = cfg.generation.samples_per_problem;
    let mut missing: Vec<String> = Vec::new();
    let mut problems = Vec::new();
    let mut rows = Vec::new();

    for bundle in &suite.bundles {
        let mut design_metrics: BTreeMap<DesignRole, Option<MetricVector>> = BTreeMap::new();
        for role in DesignRole::ALL {
            let key = threshold_key(&bundle.id, role);
            match records.get(&key) {
                None => {
                    missing.push(key);
                    design_metrics.insert(role, None);
                }
                Some(r) => {
                    let payload: ThresholdPayload = decode(r)?;
                    design_metrics.insert(role, payload.outcome.metrics);
                }
            }
        }
        let unopt_metrics = design_metrics[&DesignRole::Unopt];

        let mut groups: BTreeMap<MetricKind, MetricGroup> = BTreeMap::new();
        let mut per_metric: BTreeMap<MetricKind, MetricRow> = BTreeMap::new();
        for &m in &cfg.target_metrics {
            let reference = design_metrics[&role_for_metric(m)].and_then(|v| v.get(m));
            let baseline = unopt_metrics.and_then(|v| v.get(m));
            let threshold = match suite.thresholds.kind {
                ThresholdPolicyKind::UnoptBaseline => baseline,
                ThresholdPolicyKind::Explicit => suite
                    .thresholds
                    .overrides
                    .get(&bundle.id)
                    .and_then(|v| v.get(m))
                    .or(baseline),
            };
            let pair = match (threshold, reference) {
                (Some(t), Some(r)) if t > r => Some((t, r)),
                _ => None,
            };
            let degenerate = pair.is_none();

            let mut c = 0usize;
            let mut e: Vec<f64> = Vec::with_capacity(n);
            let mut verdicts: BTreeMap<String, usize> = BTreeMap::new();
            let mut best_measured: Option<f64> = None;

            for j in 0..n {
                let s_key = sample_key(&bundle.id, cfg.formulation, m, j);
                let Some(s_rec) = records.get(&s_key) else {
                    missing.push(s_key);
                    continue;
                };
                let sample: CandidateSample = decode(s_rec)?;
                let mut correct = false;
                let mut e_j = 0.0f64;
                let label: String = match sample.extraction_status {
                    ExtractionStatus::RequestFailed => "request_failed".into(),
                    ExtractionStatus::NoModuleFound => "no_code".into(),
                    _ => {
                        let v_key = sim_key(&bundle.id, cfg.formulation, m, j);
                        let Some(v_rec) = records.get(&v_key) else {
                            missing.push(v_key);
                            continue;
                        };
                        let verdict: SimVerdict = decode(v_rec)?;
                        if verdict.status != SimStatus::Pass {
                            verdict.status.label().into()
                        } else {
                            let y_key = synth_key(&bundle.id, cfg.formulation, m, j);
                            let Some(y_rec) = records.get(&y_key) else {
                                missing.push(y_key);
                                continue;
                            };
                            let outcome: SynthOutcome = decode(y_rec)?;
                            let synth_ok = outcome.ok() && outcome.metrics.is_some();
                            correct = match cfg.correctness {
                                CorrectnessRule::SimAndSynth => synth_ok,
                                CorrectnessRule::SimOnly => true,
                            };
                            if correct {
                                // A correct sample without a usable
                                // measurement earns no efficiency credit.
                                if let Some(measured) =
                                    outcome.metrics.and_then(|v| v.get(m))
                                {
                                    best_measured = Some(
                                        best_measured.map_or(measured, |b| b.min(measured)),
                                    );
                                    if let Some((t, r)) = pair {
                                        e_j = metrics::efficiency_score(
                                            measured,
                                            t,
                                            r,
                                            true,
                                            cfg.clamp_to_unit,
                                        )
                                        .expect("pair guarantees t > r");
                                    }
                                }
                            }
                            if synth_ok { "pass".into() } else { "synth_fail".into() }
                        }
                    }
                };
                if correct {
                    c += 1;
                }
                *verdicts.entry(label).or_insert(0) += 1;
                e.push(e_j);
            }

            let (mean_e, best_e) = if e.is_empty() {
                (0.0, 0.0)
            } else {
                (
                    e.iter().sum::<f64>() / e.len() as f64,
                    e.iter().cloned().fold(0.0, f64::max),
                )
            };
            groups.insert(
                m,
                MetricGroup { c, e: if degenerate { Vec::new() } else { e }, degenerate },
            );
            per_metric.insert(
                m,
                MetricRow {
                    correct: c,
                    degenerate,
                    verdicts,
                    mean_e: if degenerate { 0.0 } else { mean_e },
                    best_e: if degenerate { 0.0 } else { best_e },
                    threshold,
                    reference,
                    best_measured,
                },
            );
        }

        problems.push(ProblemScores {
            problem_id: bundle.id.clone(),
            difficulty: bundle.difficulty,
            n,
            groups,
        });
        rows.push(ProblemRow {
            problem_id: bundle.id.clone(),
            difficulty: bundle.difficulty,
            n,
            per_metric,
        });
    }

    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        let examples = missing.iter().take(8).cloned().collect();
        return Err(RunError::IncompleteRun { count: missing.len(), examples });
    }
    Ok((ScoreTable { problems }, rows))
}

pub fn build_report(
    cfg: &RunConfig,
    suite: &Suite,
    hash: &str,
    scores: SuiteScores,
    problems: Vec<ProblemRow>,
) -> RunReport {
    let mut config = BTreeMap::new();
    config.insert("suite".to_string(), cfg.suite_path.display().to_string());
    config.insert("endpoint".to_string(), cfg.generation.endpoint_url.clone());
    config.insert("model".to_string(), cfg.generation.model_name.clone());
    config.insert(
        "samples_per_problem".to_string(),
        cfg.generation.samples_per_problem.to_string(),
    );
    config.insert(
        "target_metrics".to_string(),
        cfg.target_metrics.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
    );
    config.insert(
        "ks".to_string(),
        cfg.ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
    );
    config.insert(
        "backend".to_string(),
        format!("{} ({})", cfg.backend.name, cfg.backend.strategy.name),
    );
    config.insert("sim".to_string(), cfg.sim.label().to_string());
    config.insert("correctness".to_string(), cfg.correctness.label().to_string());
    config.insert("clamp_efficiency".to_string(), cfg.clamp_to_unit.to_string());
    config.insert("jobs".to_string(), cfg.jobs.to_string());
    let created_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    RunReport {
        run_id: hash[..12.min(hash.len())].to_string(),
        created_unix,
        tool_version: report::TOOL_VERSION.into(),
        suite_name: suite.name.clone(),
        formulation: cfg.formulation,
        config,
        scores,
        problems,
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub report: RunReport,
    pub table: ScoreTable,
    pub outputs: Vec<PathBuf>,
    pub log_path: PathBuf,
    pub progress: Progress,
}

/// Executes (or resumes) a full run and writes the report artifacts.
/// `endpoint_override` substitutes the generation endpoint, for fault
/// injection in tests; normally the endpoint comes from the configuration.
pub fn cmd_run(
    cfg: &RunConfig,
    log_path: &Path,
    out_dir: &Path,
    endpoint_override: Option<&dyn ChatEndpoint>,
) -> Result<RunSummary, RunError> {
    let mut opened = open_run(cfg, log_path)?;
    let mut progress = Progress::new();
    run_thresholds(cfg, &mut opened, &mut progress)?;
    let built;
    let endpoint: &dyn ChatEndpoint = match endpoint_override {
        Some(e) => e,
        None => {
            built = codegen::make_endpoint(&cfg.generation, &opened.suite)
                .map_err(RunError::Endpoint)?;
            built.as_ref()
        }
    };
    run_samples(cfg, endpoint, &mut opened, &mut progress)?;
    run_sims(cfg, &mut opened, &mut progress)?;
    run_synths(cfg, &mut opened, &mut progress)?;
    let (table, problem_rows) = assemble_table(cfg, &opened.suite, &opened.records)?;
    let scores = metrics::score_suite(&table, &cfg.ks)?;
    let run_report = build_report(cfg, &opened.suite, &opened.hash, scores, problem_rows);
    let outputs = report::write_run_outputs(out_dir, &run_report)?;
    Ok(RunSummary {
        report: run_report,
        table,
        outputs,
        log_path: log_path.to_path_buf(),
        progress,
    })
}

/// Rescoring knobs; everything not overridden comes from the recorded
/// configuration. Correctness and thresholds only affect how recorded
/// results are interpreted, so rescoring never reruns any tool.
#[derive(Debug, Default, Clone)]
pub struct ScoreOptions {
    pub ks: Option<Vec<usize>>,
    pub thresholds: Option<ThresholdPolicy>,
    pub clamp_to_unit: Option<bool>,
    pub correctness: Option<CorrectnessRule>,
}

#[derive(Debug)]
pub struct Rescored {
    pub config: RunConfig,
    pub suite: Suite,
    pub hash: String,
    pub scores: SuiteScores,
    pub table: ScoreTable,
    pub problems: Vec<ProblemRow>,
}

/// Recomputes scores from an existing log without running anything.
pub fn cmd_score(log_path: &Path, opts: &ScoreOptions) -> Result<Rescored, RunError> {
    let out = record::read_records(log_path)?;
    let mut records: BTreeMap<String, Record> = BTreeMap::new();
    let mut hash: Option<String> = None;
    for r in out.records {
        match &hash {
            None => hash = Some(r.config_hash.clone()),
            Some(h) if *h != r.config_hash => {
                return Err(RunError::ConfigMismatch { path: log_path.to_path_buf() });
            }
            _ => {}
        }
        records.insert(r.key.clone(), r);
    }
    let meta_rec = records
        .get(META_KEY)
        .ok_or_else(|| RunError::Invalid("run log has no meta record".into()))?;
    let meta: MetaPayload = decode(meta_rec)?;
    let mut cfg = meta.config;
    if let Some(ks) = &opts.ks {
        cfg.ks = ks.clone();
    }
    if let Some(v) = opts.clamp_to_unit {
        cfg.clamp_to_unit = v;
    }
    if let Some(v) = opts.correctness {
        cfg.correctness = v;
    }
    cfg.validate()?;
    let mut suite = problem_store::load_suite(&cfg.suite_path)?;
    if let Some(p) = &opts.thresholds {
        suite.thresholds = p.clone();
    }
    let (table, problems) = assemble_table(&cfg, &suite, &records)?;
    let scores = metrics::score_suite(&table, &cfg.ks)?;
    Ok(Rescored {
        config: cfg,
        suite,
        hash: hash.unwrap_or_default(),
        scores,
        table,
        problems,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyStatus {
    Pass,
    Warn,
    Fail,
}

impl std::fmt::Display for VerifyStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VerifyStatus::Pass => "pass",
            VerifyStatus::Warn => "warn",
            VerifyStatus::Fail => "fail",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub problem_id: String,
    pub check: String,
    pub status: VerifyStatus,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
}

impl VerifyReport {
    pub fn hard_failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status == VerifyStatus::Fail).count()
    }

    pub fn warnings(&self) -> usize {
        self.rows.iter().filter(|r| r.status == VerifyStatus::Warn).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("problem,check,status,detail\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.problem_id,
                r.check,
                r.status,
                r.detail.replace([',', '\n'], ";")
            ));
        }
        out
    }
}

/// Audits a suite's stored designs: each reference must behave identically
/// to the baseline under the testbench, all four designs must synthesize,
/// and each reference must measure strictly better than the baseline on
/// its own metric. A tie is a warning (efficiency would be degenerate);
/// a reference measuring worse is a hard failure.
pub fn cmd_verify_refs(
    suite: &Suite,
    sim: &SimMode,
    backend: &SynthBackend,
) -> Result<VerifyReport, RunError> {
    let mut verify = VerifyReport::default();
    for bundle in &suite.bundles {
        for kind in MetricKind::ALL {
            let verdict = sim.run(bundle.reference_src(kind), bundle)?;
            let (status, detail) = if verdict.status == SimStatus::Pass {
                (VerifyStatus::Pass, String::new())
            } else {
                (VerifyStatus::Fail, verdict.status.label().to_string())
            };
            verify.rows.push(VerifyRow {
                problem_id: bundle.id.clone(),
                check: format!("sim-equivalence:{}", role_for_metric(kind)),
                status,
                detail,
            });
        }

        let mut measured: BTreeMap<DesignRole, Option<MetricVector>> = BTreeMap::new();
        for role in DesignRole::ALL {
            let outcome = synth::synthesize(role.source(bundle), backend)?;
            let ok = outcome.ok() && outcome.metrics.is_some();
            measured.insert(role, outcome.metrics);
            verify.rows.push(VerifyRow {
                problem_id: bundle.id.clone(),
                check: format!("synth:{role}"),
                status: if ok { VerifyStatus::Pass } else { VerifyStatus::Fail },
                detail: if ok { String::new() } else { outcome.label().to_string() },
            });
        }

        let unopt = measured[&DesignRole::Unopt];
        for kind in MetricKind::ALL {
            let t = unopt.and_then(|v| v.get(kind));
            let r = measured[&role_for_metric(kind)].and_then(|v| v.get(kind));
            let (status, detail) = match (t, r) {
                (Some(t), Some(r)) if r < t => {
                    (VerifyStatus::Pass, format!("{r:.3} < {t:.3}"))
                }
                (Some(t), Some(r)) if r == t => (
                    VerifyStatus::Warn,
                    "no strict improvement margin; efficiency would be degenerate".to_string(),
                ),
                (Some(t), Some(r)) => (
                    VerifyStatus::Fail,
                    format!("reference measures worse than baseline: {r:.3} > {t:.3}"),
                ),
                _ => (VerifyStatus::Fail, "metric unavailable".to_string()),
            };
            verify.rows.push(VerifyRow {
                problem_id: bundle.id.clone(),
                check: format!("direction:{kind}"),
                status,
                detail,
            });
        }
    }
    Ok(verify)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::MockScript;
    use crate::problem_store::{
        save_bundle, Difficulty, ProblemBundle, ReferenceEntry, ReferenceSet,
    };

    fn test_bundle(id: &str) -> ProblemBundle {
        let design = |body: &str| {
            format!("module unopt_model (input [3:0] a, output [3:0] y);\n{body}\nendmodule\n")
        };
        ProblemBundle {
            id: id.into(),
            difficulty: if id.ends_with('2') { Difficulty::Hard } else { Difficulty::Easy },
            source: "unit".into(),
            prompt: "Negate a 4-bit vector.".into(),
            module_header: "module negator (input [3:0] a, output [3:0] y);".into(),
            unoptimized_src: design("assign y = ~a + 1'b1;"),
            references: ReferenceSet {
                area: ReferenceEntry {
                    src: design("assign y = 4'd0 - a;"),
                    file: "opt_area.v".into(),
                },
                delay: ReferenceEntry {
                    src: design("assign y = (~a) + 4'b0001;"),
                    file: "opt_delay.v".into(),
                },
                power: ReferenceEntry {
                    src: design("assign y = 4'd0 - a;"),
                    file: "opt_area.v".into(),
                },
            },
            testbench_src: "module tb;\ninitial begin\n$display(\"Total mismatches: %0d\", 0);\n$display(\"Simulation completed.\");\nend\nendmodule\n"
                .into(),
            is_sequential: false,
            tags: vec![],
        }
    }

    fn write_suite(dir: &Path, ids: &[&str]) -> PathBuf {
        let mut manifest = String::from("name = \"unit-suite\"\nbundles = [");
        for (i, id) in ids.iter().enumerate() {
            save_bundle(&test_bundle(id), &dir.join(id)).unwrap();
            if i > 0 {
                manifest.push_str(", ");
            }
            manifest.push_str(&format!("\"{id}\""));
        }
        manifest.push_str("]\n");
        let path = dir.join("suite.toml");
        std::fs::write(&path, manifest).unwrap();
        path
    }

    fn mixed_config(suite_path: &Path) -> RunConfig {
        let suite = problem_store::load_suite(suite_path).unwrap();
        RunConfig {
            suite_path: suite_path.to_path_buf(),
            formulation: Formulation::RewriteUnoptimized,
            generation: GenerationConfig {
                endpoint_url: "mock:mixed".into(),
                samples_per_problem: 4,
                ..GenerationConfig::default()
            },
            target_metrics: MetricKind::ALL.to_vec(),
            ks: vec![1, 2, 4],
            backend: SynthBackend::mock_seeded(&suite.bundles),
            sim: SimMode::Mock,
            correctness: CorrectnessRule::SimAndSynth,
            clamp_to_unit: true,
            jobs: 1,
        }
    }

    #[test]
    fn mixed_run_reproduces_hand_scores() {
        let dir = tempfile::tempdir().unwrap();
        let suite_path = write_suite(dir.path(), &["p_a", "p_b2"]);
        let cfg = mixed_config(&suite_path);
        let out = dir.path().join("out");
        let summary = cmd_run(&cfg, &dir.path().join("run.jsonl"), &out, None).unwrap();

        // Mixed script per problem per metric: reference, baseline,
        // broken variant, prose. c = 2, e = [1, 0, 0, 0].
        for p in &summary.table.problems {
            for g in p.groups.values() {
                assert_eq!(g.c, 2);
                assert!(!g.degenerate);
                let mut sorted = g.e.clone();
                sorted.sort_by(f64::total_cmp);
                assert_eq!(sorted, vec![0.0, 0.0, 0.0, 1.0]);
            }
        }
        let overall = &summary.report.scores.overall;
        assert_eq!(overall[&1].pass, 0.5);
        assert_eq!(overall[&4].pass, 1.0);
        for m in MetricKind::ALL {
            assert_eq!(overall[&1].eff.get(m), Some(0.25));
            assert!((overall[&2].eff.get(m).unwrap() - 0.5).abs() < 1e-12);
            assert_eq!(overall[&4].eff.get(m), Some(1.0));
        }
        assert!((overall[&2].pass - 5.0 / 6.0).abs() < 1e-12);
        assert!(out.join("scores.csv").exists());
        assert!(out.join("report.md").exists());
    }

    #[test]
    fn rerun_and_resume_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let suite_path = write_suite(dir.path(), &["p_a"]);
        let cfg = mixed_config(&suite_path);

        let out1 = dir.path().join("out1");
        let log1 = dir.path().join("run1.jsonl");
        cmd_run(&cfg, &log1, &out1, None).unwrap();
        let golden = std::fs::read(out1.join("scores.csv")).unwrap();

        // A fresh run elsewhere produces the same bytes.
        let out2 = dir.path().join("out2");
        cmd_run(&cfg, &dir.path().join("run2.jsonl"), &out2, None).unwrap();
        assert_eq!(std::fs::read(out2.join("scores.csv")).unwrap(), golden);

        // Rerunning over the finished log recomputes nothing.
        let again = cmd_run(&cfg, &log1, &out1, None).unwrap();
        for (stage, p) in &again.progress {
            assert_eq!(p.executed, 0, "stage {stage} reran work");
        }

        // Truncating the log mid-record and rerunning heals it and
        // reproduces the same bytes.
        let bytes = std::fs::read(&log1).unwrap();
        std::fs::write(&log1, &bytes[..bytes.len() / 2]).unwrap();
        let out3 = dir.path().join("out3");
        let resumed = cmd_run(&cfg, &log1, &out3, None).unwrap();
        assert!(resumed.progress.values().any(|p| p.executed > 0));
        assert_eq!(std::fs::read(out3.join("scores.csv")).unwrap(), golden);
    }

    #[test]
    fn reference_and_baseline_scripts_hit_exact_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let suite_path = write_suite(dir.path(), &["p_a"]);
        let mut cfg = mixed_config(&suite_path);
        cfg.generation.samples_per_problem = 2;
        cfg.ks = vec![1];

        cfg.generation.endpoint_url = format!("mock:{}", MockScript::References.name());
        let refs = cmd_run(
            &cfg,
            &dir.path().join("refs.jsonl"),
            &dir.path().join("refs_out"),
            None,
        )
        .unwrap();
        let k1 = &refs.report.scores.overall[&1];
        assert_eq!(k1.pass, 1.0);
        for m in MetricKind::ALL {
            assert_eq!(k1.eff.get(m), Some(1.0), "echoing the reference scores exactly 1");
        }

        cfg.generation.endpoint_url = format!("mock:{}", MockScript::Baseline.name());
        let base = cmd_run(
            &cfg,
            &dir.path().join("base.jsonl"),
            &dir.path().join("base_out"),
            None,
        )
        .unwrap();
        let k1 = &base.report.scores.overall[&1];
        assert_eq!(k1.pass, 1.0);
        for m in MetricKind::ALL {
            assert_eq!(k1.eff.get(m), Some(0.0), "echoing the baseline scores exactly 0");
        }
    }

    #[test]
    fn changed_config_refuses_existing_log() {
        let dir = tempfile::tempdir().unwrap();
        let suite_path = write_suite(dir.path(), &["p_a"]);
        let cfg = mixed_config(&suite_path);
        let log = dir.path().join("run.jsonl");
        cmd_run(&cfg, &log, &dir.path().join("out"), None).unwrap();

        let mut changed = cfg.clone();
        changed.generation.seed_base = 99;
        let err = cmd_run(&changed, &log, &dir.path().join("out2"), None).unwrap_err();
        assert!(matches!(err, RunError::ConfigMismatch { .. }));
    }

    #[test]
    fn missing_records_are_enumerated() {
        let dir = tempfile::tempdir().unwrap();
        let suite_path = write_suite(dir.path(), &["p_a"]);
        let cfg = mixed_config(&suite_path);
        let log = dir.path().join("run.jsonl");
        cmd_run(&cfg, &log, &dir.path().join("out"), None).unwrap();

        // Remove one sim verdict line outright.
        let text = std::fs::read_to_string(&log).unwrap();
        let filtered: Vec<&str> = text
            .lines()
            .filter(|l| !l.contains("\"v|p_a|rewrite|area|0\""))
            .collect();
        assert!(filtered.len() < text.lines().count(), "test must drop a line");
        std::fs::write(&log, filtered.join("\n") + "\n").unwrap();

        let err = cmd_score(&log, &ScoreOptions::default()).unwrap_err();
        match err {
            RunError::IncompleteRun { count, examples } => {
                assert_eq!(count, 1);
                assert_eq!(examples, vec!["v|p_a|rewrite|area|0".to_string()]);
            }
            other => panic!("expected IncompleteRun, got {other}"),
        }
    }

    #[test]
    fn rescoring_changes_eff_but_never_pass() {
        let dir = tempfile::tempdir().unwrap();
        let suite_path = write_suite(dir.path(), &["p_a"]);
        let cfg = mixed_config(&suite_path);
        let log = dir.path().join("run.jsonl");
        let run = cmd_run(&cfg, &log, &dir.path().join("out"), None).unwrap();

        let rescored = cmd_score(&log, &ScoreOptions { ks: Some(vec![1]), ..Default::default() })
            .unwrap();
        assert_eq!(rescored.scores.overall[&1].pass, run.report.scores.overall[&1].pass);

        // An explicit threshold far above the baseline inflates e for the
        // reference-echo sample (unclamped), but pass@k cannot move.
        let mut overrides = BTreeMap::new();
        overrides.insert("p_a".to_string(), MetricVector::complete(1e9, 1e9, 1e9));
        let shifted = cmd_score(
            &log,
            &ScoreOptions {
                thresholds: Some(ThresholdPolicy {
                    kind: ThresholdPolicyKind::Explicit,
                    overrides,
                }),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(
            shifted.scores.overall[&1].pass,
            run.report.scores.overall[&1].pass,
            "threshold policy must not affect pass@k"
        );
        for m in MetricKind::ALL {
            assert!(
                shifted.scores.overall[&1].eff.get(m).unwrap()
                    > run.report.scores.overall[&1].eff.get(m).unwrap(),
                "higher threshold leaves more headroom on {m}"
            );
        }
    }

    #[test]
    fn verify_refs_passes_on_seeded_mock() {
        let dir = tempfile::tempdir().unwrap();
        let suite_path = write_suite(dir.path(), &["p_a", "p_b2"]);
        let suite = problem_store::load_suite(&suite_path).unwrap();
        let backend = SynthBackend::mock_seeded(&suite.bundles);
        let verify = cmd_verify_refs(&suite, &SimMode::Mock, &backend).unwrap();
        assert_eq!(verify.hard_failures(), 0);
        assert_eq!(verify.warnings(), 0);
        // 2 problems x (3 equivalence + 4 synth + 3 direction) rows.
        assert_eq!(verify.rows.len(), 20);
        let csv = verify.to_csv();
        assert!(csv.starts_with("problem,check,status,detail\n"));
        assert!(csv.contains("p_a,sim-equivalence:opt_area,pass,"));
        assert!(csv.contains("direction:delay,pass,"));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let cfg = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = RunConfig {
                suite_path: PathBuf::from("suite.toml"),
                formulation: Formulation::RewriteUnoptimized,
                generation: GenerationConfig::default(),
                target_metrics: MetricKind::ALL.to_vec(),
                ks: vec![1, 2, 4],
                backend: SynthBackend::mock(),
                sim: SimMode::Mock,
                correctness: CorrectnessRule::SimAndSynth,
                clamp_to_unit: true,
                jobs: 1,
            };
            f(&mut c);
            c.validate()
        };
        assert!(cfg(&|_| {}).is_ok());
        assert!(cfg(&|c| c.ks = vec![]).is_err());
        assert!(cfg(&|c| c.ks = vec![5]).is_err(), "k beyond n");
        assert!(cfg(&|c| c.ks = vec![1, 1]).is_err(), "duplicate k");
        assert!(cfg(&|c| c.target_metrics = vec![]).is_err());
        assert!(
            cfg(&|c| c.target_metrics = vec![MetricKind::Area, MetricKind::Area]).is_err()
        );
        assert!(cfg(&|c| c.jobs = 0).is_err());
        assert!(cfg(&|c| c.generation.samples_per_problem = 0).is_err());
    }

    #[test]
    fn parallel_runs_match_sequential() {
        let dir = tempfile::tempdir().unwrap();
        let suite_path = write_suite(dir.path(), &["p_a", "p_b2"]);
        let cfg = mixed_config(&suite_path);
        let seq = cmd_run(&cfg, &dir.path().join("seq.jsonl"), &dir.path().join("seq_out"), None)
            .unwrap();
        let mut par_cfg = cfg.clone();
        par_cfg.jobs = 4;
        let par = cmd_run(
            &par_cfg,
            &dir.path().join("par.jsonl"),
            &dir.path().join("par_out"),
            None,
        )
        .unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("seq_out/scores.csv")).unwrap(),
            std::fs::read(dir.path().join("par_out/scores.csv")).unwrap(),
            "job count must not change results"
        );
        assert_eq!(seq.report.scores, par.report.scores);
    }
}
