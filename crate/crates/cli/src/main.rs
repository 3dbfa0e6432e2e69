//! Command-line front end for the evaluation harness.
//!
//! Exit codes: 0 when the requested work completed (even if scores are
//! poor), 1 for evaluation failures (bad configuration, failed checks,
//! incomplete logs), 2 for environment problems (missing simulator or
//! synthesis tools, unreachable generation endpoint).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use rtleff_core::ablation::{self, AblationError, SweepPlan};
use rtleff_core::codegen::Formulation;
use rtleff_core::config::{
    self, BackendChoice, ConfigError, CorrectnessRule, FileConfig, ResolvedConfig, SimChoice,
};
use rtleff_core::metric::MetricKind;
use rtleff_core::pipeline::{self, RunConfig, RunError, ScoreOptions};
use rtleff_core::problem_store::{self, Suite};
use rtleff_core::report::{self, TableFormat};
use rtleff_core::sim::SimConfig;
use rtleff_core::synth::{SynthBackend, SynthEnvError};

#[derive(Parser)]
#[command(
    name = "rtleff",
    version,
    about = "Efficiency-aware evaluation of generated Verilog against optimized references"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every bundle of a suite for structural problems.
    Validate(ValidateArgs),
    /// Generate, simulate, synthesize, and score a full run.
    Run(RunArgs),
    /// Recompute scores from an existing run log without rerunning tools.
    Score(ScoreArgs),
    /// Rewrite the report artifacts from an existing run log.
    Report(ReportArgs),
    /// Audit suite designs: testbench equivalence, synthesizability, and
    /// whether each reference actually improves its own metric.
    VerifyRefs(VerifyArgs),
    /// Synthesize every stored design under several backends and compare.
    Ablate(AblateArgs),
}

/// Options shared by the commands that assemble a full configuration.
/// Flags override the configuration file, which overrides defaults.
#[derive(Args)]
struct CommonConfig {
    /// Configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Suite manifest path.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Generation endpoint URL, or mock:references, mock:baseline, mock:mixed.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent with each generation request.
    #[arg(long)]
    model: Option<String>,
    /// Samples per problem per target metric.
    #[arg(long)]
    samples: Option<usize>,
    /// Worker threads for generation, simulation, and synthesis.
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated k values for pass@k and eff@k.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Comma-separated target metrics: area, delay, power.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Task formulation: rewrite (optimize the given source) or spec
    /// (implement from the prompt).
    #[arg(long)]
    formulation: Option<String>,
    /// Base seed for sample generation.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulator choice: auto, mock, or external.
    #[arg(long)]
    sim: Option<String>,
    /// Synthesis backend: mock, mock-seeded, or a backend TOML path.
    #[arg(long)]
    backend: Option<String>,
    /// Strategy name within the chosen backend.
    #[arg(long)]
    strategy: Option<String>,
    /// Count simulation alone toward correctness (skip the synthesis gate).
    #[arg(long)]
    sim_only: bool,
    /// Leave efficiency scores above 1 unclamped.
    #[arg(long)]
    no_clamp: bool,
    /// Sampling temperature.
    #[arg(long)]
    temperature: Option<f64>,
}

impl CommonConfig {
    fn resolve(&self) -> anyhow::Result<ResolvedConfig> {
        let mut r = match &self.config {
            Some(path) => {
                let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
                FileConfig::load(path)?.resolve(&base)?
            }
            None => ResolvedConfig::default(),
        };
        if let Some(p) = &self.suite {
            r.suite_path = Some(p.clone());
        }
        if let Some(v) = &self.endpoint {
            r.generation.endpoint_url = v.clone();
        }
        if let Some(v) = &self.model {
            r.generation.model_name = v.clone();
        }
        if let Some(v) = self.samples {
            r.generation.samples_per_problem = v;
        }
        if let Some(v) = self.jobs {
            r.jobs = v;
        }
        if let Some(v) = &self.ks {
            r.ks = v.clone();
        }
        if let Some(names) = &self.metrics {
            let mut metrics = Vec::new();
            for name in names {
                let m = MetricKind::parse(name)
                    .ok_or_else(|| anyhow::anyhow!("unknown metric `{name}`"))?;
                metrics.push(m);
            }
            r.target_metrics = metrics;
        }
        if let Some(v) = &self.formulation {
            r.formulation = Formulation::parse(v)
                .ok_or_else(|| anyhow::anyhow!("unknown formulation `{v}`"))?;
        }
        if let Some(v) = self.seed {
            r.generation.seed_base = v;
        }
        if let Some(v) = &self.sim {
            let carried = match &r.sim {
                SimChoice::Auto(c) | SimChoice::External(c) => c.clone(),
                SimChoice::Mock => SimConfig::default(),
            };
            r.sim = match v.as_str() {
                "auto" => SimChoice::Auto(carried),
                "mock" => SimChoice::Mock,
                "external" => SimChoice::External(carried),
                other => bail!("unknown simulator choice `{other}` (auto, mock, external)"),
            };
        }
        if let Some(v) = &self.backend {
            r.backend = parse_backend_choice(v);
        }
        if let Some(v) = &self.strategy {
            r.backend_strategy = Some(v.clone());
        }
        if self.sim_only {
            r.correctness = CorrectnessRule::SimOnly;
        }
        if self.no_clamp {
            r.clamp_efficiency = false;
        }
        if let Some(v) = self.temperature {
            r.generation.temperature = v;
        }
        Ok(r)
    }
}

fn parse_backend_choice(s: &str) -> BackendChoice {
    match s {
        "mock" => BackendChoice::Mock,
        "mock-seeded" => BackendChoice::MockSeeded,
        path => BackendChoice::FromFile(PathBuf::from(path)),
    }
}

fn load_suite_from(r: &ResolvedConfig) -> anyhow::Result<(PathBuf, Suite)> {
    let path = r
        .suite_path
        .clone()
        .ok_or_else(|| anyhow::anyhow!("no suite given (use --suite or [run].suite)"))?;
    let suite = problem_store::load_suite(&path)?;
    Ok((path, suite))
}

fn build_run_config(r: ResolvedConfig) -> anyhow::Result<(RunConfig, Suite)> {
    let (suite_path, suite) = load_suite_from(&r)?;
    let sim = config::resolve_sim_mode(&r.sim)?;
    let backend =
        config::resolve_backend(&r.backend, &suite.bundles, r.backend_strategy.as_deref())?;
    let cfg = RunConfig {
        suite_path,
        formulation: r.formulation,
        generation: r.generation,
        target_metrics: r.target_metrics,
        ks: r.ks,
        backend,
        sim,
        correctness: r.correctness,
        clamp_to_unit: r.clamp_efficiency,
        jobs: r.jobs,
    };
    Ok((cfg, suite))
}

#[derive(Args)]
struct ValidateArgs {
    /// Suite manifest path.
    #[arg(long)]
    suite: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Directory for report artifacts.
    #[arg(long, default_value = "rtleff-out")]
    out_dir: PathBuf,
    /// Run log path; defaults to <out-dir>/run.jsonl.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Run log to rescore.
    #[arg(long)]
    log: PathBuf,
    /// Comma-separated k values overriding the recorded ones.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Count simulation alone toward correctness.
    #[arg(long, conflicts_with = "sim_and_synth")]
    sim_only: bool,
    /// Require synthesis to succeed for correctness.
    #[arg(long)]
    sim_and_synth: bool,
    /// Leave efficiency scores above 1 unclamped.
    #[arg(long, conflicts_with = "clamp")]
    no_clamp: bool,
    /// Clamp efficiency scores to 1.
    #[arg(long)]
    clamp: bool,
    /// Output format for the score table.
    #[arg(long, default_value = "markdown")]
    format: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Run log to report from.
    #[arg(long)]
    log: PathBuf,
    /// Directory for report artifacts.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Also write the row-per-check table to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Suite manifest path.
    #[arg(long)]
    suite: PathBuf,
    /// Backends to sweep: mock, mock-seeded, or backend TOML paths.
    /// Repeat the flag for several.
    #[arg(long = "backend", required = true)]
    backends: Vec<String>,
    /// Directory for sweep artifacts.
    #[arg(long, default_value = "ablation-out")]
    out_dir: PathBuf,
    /// Sweep log path; defaults to <out-dir>/sweep.jsonl.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            let mut prev = err.to_string();
            for cause in err.chain().skip(1) {
                let text = cause.to_string();
                if !prev.contains(&text) {
                    eprintln!("  caused by: {text}");
                }
                prev = text;
            }
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Maps an error chain onto the process exit contract; environment
/// problems (absent tools, unreachable endpoint) exit 2.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<RunError>() {
        return pipeline::exit_code(e) as u8;
    }
    if let Some(e) = err.downcast_ref::<ConfigError>() {
        return match e {
            ConfigError::ToolMissing { .. } => 2,
            ConfigError::Backend(SynthEnvError::BackendNotInstalled(_)) => 2,
            _ => 1,
        };
    }
    if let Some(e) = err.downcast_ref::<AblationError>() {
        return match e {
            AblationError::AllCellsFailed(_) => 2,
            _ => 1,
        };
    }
    1
}

fn execute(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Validate(args) => cmd_validate(args),
        Command::Run(args) => cmd_run(args),
        Command::Score(args) => cmd_score(args),
        Command::Report(args) => cmd_report(args),
        Command::VerifyRefs(args) => cmd_verify_refs(args),
        Command::Ablate(args) => cmd_ablate(args),
    }
}

fn cmd_validate(args: ValidateArgs) -> anyhow::Result<u8> {
    let suite = problem_store::load_suite(&args.suite)?;
    let mut failed = 0usize;
    for bundle in &suite.bundles {
        let verdict = problem_store::validate_bundle(bundle);
        if verdict.passed() {
            println!("{}: ok", bundle.id);
        } else {
            failed += 1;
            for check in verdict.failures() {
                let detail = if check.detail.is_empty() { "" } else { ": " };
                println!("{}: FAIL {}{}{}", bundle.id, check.name, detail, check.detail);
            }
        }
    }
    println!(
        "{} bundle(s), {} failed validation",
        suite.bundles.len(),
        failed
    );
    Ok(if failed == 0 { 0 } else { 1 })
}

fn cmd_run(args: RunArgs) -> anyhow::Result<u8> {
    let resolved = args.common.resolve()?;
    let (cfg, _suite) = build_run_config(resolved)?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| args.out_dir.join("run.jsonl"));
    if let Some(parent) = log_path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    let summary = pipeline::cmd_run(&cfg, &log_path, &args.out_dir, None)?;

    for (stage, p) in &summary.progress {
        println!("{stage}: {} executed, {} reused", p.executed, p.reused);
    }
    println!();
    print!(
        "{}",
        report::emit_score_table(&summary.report.scores, TableFormat::Markdown)?
    );
    if !summary.report.scores.degenerate.is_empty() {
        println!();
        for (problem, metric) in &summary.report.scores.degenerate {
            println!(
                "warning: {problem}/{metric} has no improvement margin; efficiency not scored"
            );
        }
    }
    println!();
    for path in &summary.outputs {
        println!("wrote {}", path.display());
    }
    println!("log {}", summary.log_path.display());
    Ok(0)
}

fn score_options(args: &ScoreArgs) -> ScoreOptions {
    ScoreOptions {
        ks: args.ks.clone(),
        thresholds: None,
        clamp_to_unit: if args.no_clamp {
            Some(false)
        } else if args.clamp {
            Some(true)
        } else {
            None
        },
        correctness: if args.sim_only {
            Some(CorrectnessRule::SimOnly)
        } else if args.sim_and_synth {
            Some(CorrectnessRule::SimAndSynth)
        } else {
            None
        },
    }
}

fn cmd_score(args: ScoreArgs) -> anyhow::Result<u8> {
    let format = match args.format.as_str() {
        "markdown" | "md" => TableFormat::Markdown,
        "csv" => TableFormat::Csv,
        "json" => TableFormat::Json,
        other => bail!("unknown format `{other}` (markdown, csv, json)"),
    };
    let opts = score_options(&args);
    let rescored = pipeline::cmd_score(&args.log, &opts)?;
    print!("{}", report::emit_score_table(&rescored.scores, format)?);
    Ok(0)
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<u8> {
    let rescored = pipeline::cmd_score(&args.log, &ScoreOptions::default())?;
    let run_report = pipeline::build_report(
        &rescored.config,
        &rescored.suite,
        &rescored.hash,
        rescored.scores,
        rescored.problems,
    );
    let outputs = report::write_run_outputs(&args.out_dir, &run_report)?;
    for path in &outputs {
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_verify_refs(args: VerifyArgs) -> anyhow::Result<u8> {
    let resolved = args.common.resolve()?;
    let (_path, suite) = load_suite_from(&resolved)?;
    let sim = config::resolve_sim_mode(&resolved.sim)?;
    let backend = config::resolve_backend(
        &resolved.backend,
        &suite.bundles,
        resolved.backend_strategy.as_deref(),
    )?;
    let verify = pipeline::cmd_verify_refs(&suite, &sim, &backend)?;
    for row in &verify.rows {
        if row.detail.is_empty() {
            println!("{}: {} {}", row.problem_id, row.check, row.status);
        } else {
            println!(
                "{}: {} {} ({})",
                row.problem_id, row.check, row.status, row.detail
            );
        }
    }
    println!(
        "{} check(s), {} failed, {} warning(s)",
        verify.rows.len(),
        verify.hard_failures(),
        verify.warnings()
    );
    if let Some(path) = &args.csv {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(path, verify.to_csv())
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(if verify.hard_failures() == 0 { 0 } else { 1 })
}

fn cmd_ablate(args: AblateArgs) -> anyhow::Result<u8> {
    let suite = problem_store::load_suite(&args.suite)?;
    let mut backends: Vec<SynthBackend> = Vec::new();
    for spec in &args.backends {
        let choice = parse_backend_choice(spec);
        backends.push(config::resolve_backend(&choice, &suite.bundles, None)?);
    }
    let plan = SweepPlan::from_suite(&suite, backends);
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| args.out_dir.join("sweep.jsonl"));
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let result = ablation::run_sweep(&plan, &log_path)?;
    println!(
        "{} cell(s): {} executed, {} reused",
        result.cells.len(),
        result.executed,
        result.resumed
    );

    let sweep_path = args.out_dir.join("sweep.csv");
    std::fs::write(&sweep_path, ablation::emit_sweep_csv(&result.cells))
        .with_context(|| format!("writing {}", sweep_path.display()))?;
    println!("wrote {}", sweep_path.display());

    let pareto_path = args.out_dir.join("pareto.csv");
    std::fs::write(&pareto_path, ablation::emit_pareto_csv(&result.cells))
        .with_context(|| format!("writing {}", pareto_path.display()))?;
    println!("wrote {}", pareto_path.display());

    match ablation::consistency_rows(&result.cells) {
        Ok(rows) => {
            let path = args.out_dir.join("consistency.csv");
            std::fs::write(&path, ablation::emit_consistency_csv(&rows))
                .with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        Err(AblationError::InsufficientBackends(n)) => {
            println!(
                "consistency skipped: needs at least 2 backend/strategy contexts, best metric had {n}"
            );
        }
        Err(other) => return Err(other.into()),
    }
    Ok(0)
}
