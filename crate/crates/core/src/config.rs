//! On-disk run configuration.
//!
//! A single TOML file carries the run policy (sample counts, k values,
//! correctness rule), the generation endpoint, the simulator choice, and
//! the synthesis backend choice. Relative paths resolve against the config
//! file's directory. Environment-dependent choices (`sim.mode = "auto"`)
//! resolve to an explicit error when the required tool is missing; nothing
//! ever silently falls back to the mock implementations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codegen::{Formulation, GenerationConfig};
use crate::metric::MetricKind;
use crate::problem_store::ProblemBundle;
use crate::sim::{SimConfig, SimMode};
use crate::synth::SynthBackend;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("required tool `{tool}` not found on PATH ({purpose}); install it or set {setting}")]
    ToolMissing {
        tool: String,
        purpose: String,
        setting: String,
    },
    #[error(transparent)]
    Backend(#[from] crate::synth::SynthEnvError),
}

/// How candidate correctness is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectnessRule {
    /// Correct means the testbench passes and the design synthesizes.
    SimAndSynth,
    /// Correct means the testbench passes; synthesis still runs for
    /// measurements but does not gate correctness.
    SimOnly,
}

impl CorrectnessRule {
    pub fn parse(s: &str) -> Option<CorrectnessRule> {
        match s {
            "sim-and-synth" => Some(CorrectnessRule::SimAndSynth),
            "sim-only" => Some(CorrectnessRule::SimOnly),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CorrectnessRule::SimAndSynth => "sim-and-synth",
            CorrectnessRule::SimOnly => "sim-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimChoice {
    /// External simulator when installed, otherwise a configuration error.
    /// Carries the command templates it would run with.
    Auto(SimConfig),
    Mock,
    External(SimConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    Mock,
    /// Mock backend seeded from the suite so every baseline measures
    /// strictly worse than its references.
    MockSeeded,
    FromFile(PathBuf),
}

/// Fully parsed and path-resolved configuration, before the pieces that
/// need the loaded suite (the seeded mock backend) are constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub suite_path: Option<PathBuf>,
    pub ks: Vec<usize>,
    pub jobs: usize,
    pub formulation: Formulation,
    pub target_metrics: Vec<MetricKind>,
    pub correctness: CorrectnessRule,
    pub clamp_efficiency: bool,
    pub generation: GenerationConfig,
    pub sim: SimChoice,
    pub backend: BackendChoice,
    pub backend_strategy: Option<String>,
}

impl Default for ResolvedConfig {
    fn default() -> Self {
        ResolvedConfig {
            suite_path: None,
            ks: vec![1, 2, 4],
            jobs: 1,
            formulation: Formulation::RewriteUnoptimized,
            target_metrics: MetricKind::ALL.to_vec(),
            correctness: CorrectnessRule::SimAndSynth,
            clamp_efficiency: true,
            generation: GenerationConfig::default(),
            sim: SimChoice::Auto(SimConfig::default()),
            backend: BackendChoice::MockSeeded,
            backend_strategy: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    generation: GenerationSection,
    #[serde(default)]
    sim: SimSection,
    #[serde(default)]
    backend: BackendSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    suite: Option<PathBuf>,
    ks: Option<Vec<usize>>,
    jobs: Option<usize>,
    formulation: Option<String>,
    target_metrics: Option<Vec<String>>,
    correctness: Option<String>,
    clamp_efficiency: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerationSection {
    endpoint_url: Option<String>,
    model_name: Option<String>,
    samples_per_problem: Option<usize>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    request_timeout_secs: Option<u64>,
    retry_limit: Option<u32>,
    seed_base: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    mode: Option<String>,
    compile_cmd: Option<String>,
    run_cmd: Option<String>,
    wall_timeout_secs: Option<u64>,
    keep_artifacts: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackendSection {
    kind: Option<String>,
    path: Option<PathBuf>,
    strategy: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
        toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), detail: e.to_string() })
    }

    /// Applies this file on top of the defaults. `base_dir` anchors
    /// relative paths (normally the config file's directory).
    pub fn resolve(self, base_dir: &Path) -> Result<ResolvedConfig, ConfigError> {
        let mut out = ResolvedConfig::default();
        let anchor = |p: PathBuf| -> PathBuf {
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };

        if let Some(suite) = self.run.suite {
            out.suite_path = Some(anchor(suite));
        }
        if let Some(ks) = self.run.ks {
            out.ks = ks;
        }
        if let Some(jobs) = self.run.jobs {
            out.jobs = jobs.max(1);
        }
        if let Some(f) = self.run.formulation {
            out.formulation = Formulation::parse(&f)
                .ok_or_else(|| ConfigError::Invalid(format!("unknown formulation `{f}`")))?;
        }
        if let Some(metrics) = self.run.target_metrics {
            let mut parsed = Vec::new();
            for m in &metrics {
                let kind = MetricKind::parse(m)
                    .ok_or_else(|| ConfigError::Invalid(format!("unknown metric `{m}`")))?;
                if !parsed.contains(&kind) {
                    parsed.push(kind);
                }
            }
            if parsed.is_empty() {
                return Err(ConfigError::Invalid("target_metrics is empty".into()));
            }
            out.target_metrics = parsed;
        }
        if let Some(c) = self.run.correctness {
            out.correctness = CorrectnessRule::parse(&c)
                .ok_or_else(|| ConfigError::Invalid(format!("unknown correctness rule `{c}`")))?;
        }
        if let Some(v) = self.run.clamp_efficiency {
            out.clamp_efficiency = v;
        }

        let g = &mut out.generation;
        if let Some(v) = self.generation.endpoint_url {
            g.endpoint_url = v;
        }
        if let Some(v) = self.generation.model_name {
            g.model_name = v;
        }
        if let Some(v) = self.generation.samples_per_problem {
            g.samples_per_problem = v;
        }
        if let Some(v) = self.generation.temperature {
            g.temperature = v;
        }
        if let Some(v) = self.generation.max_tokens {
            g.max_tokens = v;
        }
        if let Some(v) = self.generation.request_timeout_secs {
            g.request_timeout_secs = v;
        }
        if let Some(v) = self.generation.retry_limit {
            g.retry_limit = v;
        }
        if let Some(v) = self.generation.seed_base {
            g.seed_base = v;
        }

        let mut sim_cfg = SimConfig::default();
        if let Some(v) = self.sim.compile_cmd {
            sim_cfg.compile_cmd = v;
        }
        if let Some(v) = self.sim.run_cmd {
            sim_cfg.run_cmd = v;
        }
        if let Some(v) = self.sim.wall_timeout_secs {
            sim_cfg.wall_timeout_secs = v;
        }
        if let Some(v) = self.sim.keep_artifacts {
            sim_cfg.keep_artifacts = v;
        }
        out.sim = match self.sim.mode.as_deref() {
            None | Some("auto") => SimChoice::Auto(sim_cfg),
            Some("mock") => SimChoice::Mock,
            Some("external") => SimChoice::External(sim_cfg),
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "unknown sim mode `{other}` (expected auto, mock, or external)"
                )));
            }
        };

        out.backend = match self.backend.kind.as_deref() {
            None | Some("mock-seeded") => BackendChoice::MockSeeded,
            Some("mock") => BackendChoice::Mock,
            Some("file") => {
                let path = self.backend.path.ok_or_else(|| {
                    ConfigError::Invalid("backend.kind = \"file\" requires backend.path".into())
                })?;
                BackendChoice::FromFile(anchor(path))
            }
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "unknown backend kind `{other}` (expected mock, mock-seeded, or file)"
                )));
            }
        };
        out.backend_strategy = self.backend.strategy;
        Ok(out)
    }
}

/// Finds an executable on PATH.
pub fn tool_on_path(name: &str) -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    for dir in std::env::split_paths(&path) {
        let candidate = dir.join(name);
        if !candidate.is_file() {
            continue;
        }
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let executable = std::fs::metadata(&candidate)
                .map(|m| m.permissions().mode() & 0o111 != 0)
                .unwrap_or(false);
            if !executable {
                continue;
            }
        }
        return Some(candidate);
    }
    None
}

/// First argv word of a command template, for probing tool availability.
fn command_tool(template: &str) -> String {
    template.split_whitespace().next().unwrap_or_default().to_string()
}

/// Turns a simulator choice into a concrete mode. `Auto` demands the
/// external simulator and errors when it is missing, so an offline machine
/// must opt into the mock explicitly.
pub fn resolve_sim_mode(choice: &SimChoice) -> Result<SimMode, ConfigError> {
    match choice {
        SimChoice::Mock => Ok(SimMode::Mock),
        SimChoice::External(cfg) => Ok(SimMode::External(cfg.clone())),
        SimChoice::Auto(cfg) => {
            let compile_tool = command_tool(&cfg.compile_cmd);
            let run_tool = command_tool(&cfg.run_cmd);
            for tool in [&compile_tool, &run_tool] {
                if tool_on_path(tool).is_none() {
                    return Err(ConfigError::ToolMissing {
                        tool: tool.clone(),
                        purpose: "candidate simulation".into(),
                        setting: "sim.mode = \"mock\" for an offline run".into(),
                    });
                }
            }
            Ok(SimMode::External(cfg.clone()))
        }
    }
}

/// Turns a backend choice into a concrete backend. The seeded mock needs
/// the suite's bundles; file-backed backends get their strategy selected
/// here.
pub fn resolve_backend(
    choice: &BackendChoice,
    bundles: &[ProblemBundle],
    strategy: Option<&str>,
) -> Result<SynthBackend, ConfigError> {
    let backend = match choice {
        BackendChoice::Mock => SynthBackend::mock(),
        BackendChoice::MockSeeded => SynthBackend::mock_seeded(bundles),
        BackendChoice::FromFile(path) => SynthBackend::load(path)?,
    };
    match strategy {
        None => Ok(backend),
        Some(name) => backend.with_strategy(name).ok_or_else(|| {
            ConfigError::Invalid(format!(
                "backend `{}` has no strategy named `{name}`",
                backend.name
            ))
        }),
    }
}
