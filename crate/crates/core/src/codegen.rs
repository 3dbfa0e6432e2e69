//! Candidate generation: prompt construction, chat-endpoint plumbing, and
//! extraction of synthesizable Verilog from free-form model responses.
//!
//! Two prompt formulations are supported: rewriting a given working
//! implementation for a target metric, and implementing the circuit from
//! its natural-language description plus interface. Extraction prefers
//! fenced code blocks, keeps every module definition it finds (helpers
//! included), renames the top module to the interface's canonical name,
//! and is idempotent so re-extracting stored sources is a no-op.
//!
//! Endpoint failures split into fatal (unreachable, missing auth: the run
//! aborts rather than scoring garbage) and per-request (retried; if
//! retries run out the sample is recorded as a request failure so the
//! sample count stays intact).

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::metric::MetricKind;
use crate::problem_store::{ProblemBundle, Suite};
use crate::verilog;

/// Environment variable holding the bearer token for HTTP endpoints.
pub const API_KEY_ENV: &str = "RTLEFF_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    /// Hand the model a working implementation and ask for a rewrite that
    /// improves the target metric.
    RewriteUnoptimized,
    /// Hand the model the behavioral description and interface only.
    FromSpecification,
}

impl Formulation {
    pub const ALL: [Formulation; 2] =
        [Formulation::RewriteUnoptimized, Formulation::FromSpecification];

    /// Short stable label used in record keys and file names.
    pub fn short(self) -> &'static str {
        match self {
            Formulation::RewriteUnoptimized => "rewrite",
            Formulation::FromSpecification => "spec",
        }
    }

    pub fn parse(s: &str) -> Option<Formulation> {
        match s {
            "rewrite" | "rewrite-unoptimized" => Some(Formulation::RewriteUnoptimized),
            "spec" | "from-specification" => Some(Formulation::FromSpecification),
            _ => None,
        }
    }
}

impl std::fmt::Display for Formulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// `http(s)://...` for a live endpoint, or `mock:<script>` where script
    /// is `references`, `baseline`, or `mixed`.
    pub endpoint_url: String,
    pub model_name: String,
    pub samples_per_problem: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub target_metric: MetricKind,
    pub request_timeout_secs: u64,
    pub retry_limit: u32,
    /// Per-sample request seed is `seed_base + sample_index`, which keeps
    /// resumed and parallel runs byte-identical to a fresh one.
    pub seed_base: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            endpoint_url: "mock:mixed".into(),
            model_name: "offline".into(),
            samples_per_problem: 4,
            temperature: 0.8,
            max_tokens: 4096,
            target_metric: MetricKind::Area,
            request_timeout_secs: 120,
            retry_limit: 2,
            seed_base: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.endpoint_url.is_empty() {
            return Err("endpoint_url is empty".into());
        }
        if self.samples_per_problem == 0 {
            return Err("samples_per_problem must be at least 1".into());
        }
        if !(self.temperature.is_finite() && (0.0..=2.0).contains(&self.temperature)) {
            return Err(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be at least 1".into());
        }
        if self.retry_limit > 8 {
            return Err(format!("retry_limit {} exceeds the cap of 8", self.retry_limit));
        }
        Ok(())
    }

    pub fn with_target(&self, target: MetricKind) -> GenerationConfig {
        let mut out = self.clone();
        out.target_metric = target;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStatus {
    /// Exactly one module was recovered.
    Ok,
    /// The response contained no module definition.
    NoModuleFound,
    /// Several modules were recovered and concatenated; the one matching
    /// the interface (or the last one) was treated as top.
    MultipleModulesMerged,
    /// Every request attempt failed; no response text to extract from.
    RequestFailed,
}

impl ExtractionStatus {
    /// Whether a synthesizable source was recovered.
    pub fn has_source(self) -> bool {
        matches!(self, ExtractionStatus::Ok | ExtractionStatus::MultipleModulesMerged)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSample {
    pub problem_id: String,
    pub formulation: Formulation,
    pub target_metric: MetricKind,
    pub sample_index: usize,
    pub raw_response: String,
    pub extracted_src: Option<String>,
    pub extraction_status: ExtractionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EndpointError {
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("endpoint auth missing or rejected: {0}")]
    AuthMissing(String),
    #[error("request failed: {0}")]
    Failed(String),
}

impl EndpointError {
    /// Fatal errors abort the run instead of burning the retry budget.
    pub fn is_fatal(&self) -> bool {
        matches!(self, EndpointError::Unreachable(_) | EndpointError::AuthMissing(_))
    }
}

pub trait ChatEndpoint: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError>;
    fn label(&self) -> String;
}

fn metric_goal(kind: MetricKind) -> &'static str {
    match kind {
        MetricKind::Area => "smaller silicon area (fewer/simpler cells after technology mapping)",
        MetricKind::Delay => "a shorter critical path (lower combinational depth)",
        MetricKind::Power => "lower dynamic power (less switching activity)",
    }
}

/// Builds the full prompt for one (problem, formulation, target metric).
/// Deterministic: the same inputs always produce the same string, which
/// the mock endpoint and the resume logic both rely on.
pub fn build_prompt(
    bundle: &ProblemBundle,
    formulation: Formulation,
    target: MetricKind,
) -> String {
    let goal = metric_goal(target);
    match formulation {
        Formulation::RewriteUnoptimized => format!(
            "You are an expert digital design engineer.\n\
             Rewrite the Verilog module below so that it stays functionally \
             identical but synthesizes to {goal}.\n\n\
             Keep the interface exactly as declared:\n{header}\n\n\
             Current implementation:\n```verilog\n{body}```\n\n\
             Reply with the complete rewritten module in a single \
             ```verilog code block. Synthesizable Verilog-2001 only; \
             no testbench, no commentary inside the code block.\n",
            header = bundle.module_header.trim_end(),
            body = with_trailing_newline(&bundle.unoptimized_src),
        ),
        Formulation::FromSpecification => format!(
            "You are an expert digital design engineer.\n\
             Implement the circuit described below in synthesizable \
             Verilog-2001, optimizing for {goal}.\n\n\
             Description:\n{prompt}\n\n\
             Use exactly this interface:\n{header}\n\n\
             Reply with the complete module in a single ```verilog code \
             block. No testbench, no commentary inside the code block.\n",
            prompt = bundle.prompt.trim_end(),
            header = bundle.module_header.trim_end(),
        ),
    }
}

fn with_trailing_newline(s: &str) -> String {
    if s.ends_with('\n') {
        s.to_string()
    } else {
        format!("{s}\n")
    }
}

/// Collects the contents of fenced code blocks. An unclosed trailing fence
/// still yields its partial block; models drop closing fences often enough
/// that discarding those would lose real code.
fn fenced_blocks(raw: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<String> = None;
    for line in raw.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(done) => blocks.push(done),
                None => current = Some(String::new()),
            }
            continue;
        }
        if let Some(block) = current.as_mut() {
            block.push_str(line);
            block.push('\n');
        }
    }
    if let Some(unclosed) = current {
        blocks.push(unclosed);
    }
    blocks
}

/// Pulls Verilog out of a raw response. Fenced blocks that contain module
/// definitions win over the surrounding prose; otherwise the whole text is
/// scanned. All module definitions are kept in order and the top module is
/// renamed to the interface's module name.
pub fn extract_verilog(raw: &str, module_header: &str) -> (Option<String>, ExtractionStatus) {
    let canonical = verilog::find_modules(module_header)
        .first()
        .map(|m| m.name.clone())
        .unwrap_or_else(|| "dut".to_string());
    let header_ports: Vec<String> = verilog::find_modules(module_header)
        .first()
        .map(|m| m.ports.clone())
        .unwrap_or_default();

    let fenced = fenced_blocks(raw);
    let with_code: Vec<&String> = fenced
        .iter()
        .filter(|b| verilog::find_modules(b).iter().any(|m| m.has_body))
        .collect();
    let scan_text: String = if with_code.is_empty() {
        raw.to_string()
    } else {
        with_code.iter().map(|b| b.as_str()).collect::<Vec<_>>().join("\n")
    };

    let modules: Vec<_> = verilog::find_modules(&scan_text)
        .into_iter()
        .filter(|m| m.has_body)
        .collect();
    if modules.is_empty() {
        return (None, ExtractionStatus::NoModuleFound);
    }
    let merged = modules.len() > 1;
    let mut src = modules
        .iter()
        .map(|m| scan_text[m.span.0..m.span.1].trim_end())
        .collect::<Vec<_>>()
        .join("\n\n");
    src.push('\n');
    let renamed = match verilog::rename_top(&src, &header_ports, &canonical) {
        Ok(s) => s,
        Err(_) => src,
    };
    let status = if merged {
        ExtractionStatus::MultipleModulesMerged
    } else {
        ExtractionStatus::Ok
    };
    (Some(renamed), status)
}

/// Issues one generation request, retrying per-request failures. Fatal
/// endpoint errors propagate; exhausted retries produce a sample flagged
/// as a request failure so downstream counts still see all n samples.
pub fn generate_one(
    endpoint: &dyn ChatEndpoint,
    cfg: &GenerationConfig,
    bundle: &ProblemBundle,
    formulation: Formulation,
    sample_index: usize,
) -> Result<CandidateSample, EndpointError> {
    let request = ChatRequest {
        model: cfg.model_name.clone(),
        prompt: build_prompt(bundle, formulation, cfg.target_metric),
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
        seed: Some(cfg.seed_base.wrapping_add(sample_index as u64)),
    };
    let mut last_error = String::new();
    for _attempt in 0..=cfg.retry_limit {
        match endpoint.complete(&request) {
            Ok(raw) => {
                let (extracted_src, extraction_status) =
                    extract_verilog(&raw, &bundle.module_header);
                return Ok(CandidateSample {
                    problem_id: bundle.id.clone(),
                    formulation,
                    target_metric: cfg.target_metric,
                    sample_index,
                    raw_response: raw,
                    extracted_src,
                    extraction_status,
                });
            }
            Err(e) if e.is_fatal() => return Err(e),
            Err(e) => last_error = e.to_string(),
        }
    }
    Ok(CandidateSample {
        problem_id: bundle.id.clone(),
        formulation,
        target_metric: cfg.target_metric,
        sample_index,
        raw_response: format!("[no response] {last_error}"),
        extracted_src: None,
        extraction_status: ExtractionStatus::RequestFailed,
    })
}

/// Generates the full sample set for one problem under one formulation.
pub fn generate_samples(
    endpoint: &dyn ChatEndpoint,
    cfg: &GenerationConfig,
    bundle: &ProblemBundle,
    formulation: Formulation,
) -> Result<Vec<CandidateSample>, EndpointError> {
    (0..cfg.samples_per_problem)
        .map(|j| generate_one(endpoint, cfg, bundle, formulation, j))
        .collect()
}

/// OpenAI-compatible chat-completions endpoint over HTTP. The bearer token
/// comes from [`API_KEY_ENV`]; requests are sent without one when unset so
/// local open servers keep working.
pub struct HttpEndpoint {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEndpoint {
    pub fn new(url: &str, timeout_secs: u64) -> Result<HttpEndpoint, EndpointError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(timeout_secs.max(1)))
            .build()
            .map_err(|e| EndpointError::Failed(format!("http client: {e}")))?;
        Ok(HttpEndpoint {
            url: url.to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            client,
        })
    }
}

impl ChatEndpoint for HttpEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let body = serde_json::json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "seed": request.seed,
        });
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_connect() || e.is_timeout() {
                EndpointError::Unreachable(format!("{}: {e}", self.url))
            } else {
                EndpointError::Failed(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(EndpointError::AuthMissing(format!(
                "{status}; set {API_KEY_ENV} to authenticate"
            )));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(EndpointError::Failed(format!("{status}: {text}")));
        }
        let json: serde_json::Value = resp
            .json()
            .map_err(|e| EndpointError::Failed(format!("bad response body: {e}")))?;
        json["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                EndpointError::Failed("response missing choices[0].message.content".into())
            })
    }

    fn label(&self) -> String {
        format!("http:{}", self.url)
    }
}

/// What the suite mock replies with for each request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockScript {
    /// Always the stored reference for the prompted metric.
    References,
    /// Always the baseline implementation.
    Baseline,
    /// Cycle by request seed: reference, baseline, a broken variant, and a
    /// prose-only reply with no code.
    Mixed,
}

impl MockScript {
    pub fn parse(s: &str) -> Option<MockScript> {
        match s {
            "references" => Some(MockScript::References),
            "baseline" => Some(MockScript::Baseline),
            "mixed" => Some(MockScript::Mixed),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MockScript::References => "references",
            MockScript::Baseline => "baseline",
            MockScript::Mixed => "mixed",
        }
    }
}

struct MockSeedSources {
    reference: String,
    baseline: String,
}

/// Offline endpoint keyed by exact prompt text. Stateless per request
/// (the reply depends only on prompt and seed), so resumed or parallel
/// runs reproduce a fresh run byte for byte.
pub struct SuiteMockEndpoint {
    script: MockScript,
    by_prompt: BTreeMap<String, MockSeedSources>,
}

impl SuiteMockEndpoint {
    pub fn new(suite: &Suite, script: MockScript) -> SuiteMockEndpoint {
        let mut by_prompt = BTreeMap::new();
        for bundle in &suite.bundles {
            for formulation in Formulation::ALL {
                for metric in MetricKind::ALL {
                    by_prompt.insert(
                        build_prompt(bundle, formulation, metric),
                        MockSeedSources {
                            reference: bundle.reference_src(metric).to_string(),
                            baseline: bundle.unoptimized_src.clone(),
                        },
                    );
                }
            }
        }
        SuiteMockEndpoint { script, by_prompt }
    }
}

fn fence(src: &str) -> String {
    format!(
        "Here is the implementation.\n\n```verilog\n{}```\n\nIt matches the declared interface.\n",
        with_trailing_newline(src)
    )
}

/// Functionally broken twin of a source: one extra undriven wire before
/// the final `endmodule` plus an output inversion marker comment; distinct
/// fingerprint, still parses and synthesizes.
fn broken_variant(src: &str) -> String {
    match src.rfind("endmodule") {
        Some(pos) => format!(
            "{}  wire __variant_unused;\n{}",
            &src[..pos],
            &src[pos..]
        ),
        None => format!("{src}\n// variant"),
    }
}

impl ChatEndpoint for SuiteMockEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let sources = self.by_prompt.get(&request.prompt).ok_or_else(|| {
            EndpointError::Failed("mock endpoint does not recognize this prompt".into())
        })?;
        let seed = request.seed.unwrap_or(0);
        let text = match self.script {
            MockScript::References => fence(&sources.reference),
            MockScript::Baseline => fence(&sources.baseline),
            MockScript::Mixed => match seed % 4 {
                0 => fence(&sources.reference),
                1 => fence(&sources.baseline),
                2 => fence(&broken_variant(&sources.baseline)),
                _ => "I would start by profiling the critical path, but I cannot \
                      produce a full implementation here."
                    .to_string(),
            },
        };
        Ok(text)
    }

    fn label(&self) -> String {
        format!("mock:{}", self.script.name())
    }
}

/// Wrapper that fails every `every`-th request, for exercising retry and
/// failure-accounting paths.
pub struct FailingEndpoint<E> {
    pub inner: E,
    pub every: u64,
    calls: AtomicU64,
}

impl<E> FailingEndpoint<E> {
    pub fn new(inner: E, every: u64) -> FailingEndpoint<E> {
        FailingEndpoint { inner, every: every.max(1), calls: AtomicU64::new(0) }
    }
}

impl<E: ChatEndpoint> ChatEndpoint for FailingEndpoint<E> {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        if n % self.every == 0 {
            Err(EndpointError::Failed(format!("injected failure on call {n}")))
        } else {
            self.inner.complete(request)
        }
    }

    fn label(&self) -> String {
        self.inner.label()
    }
}

/// Builds the endpoint named by `endpoint_url`: `mock:<script>` or http(s).
pub fn make_endpoint(
    cfg: &GenerationConfig,
    suite: &Suite,
) -> Result<Box<dyn ChatEndpoint>, EndpointError> {
    if let Some(rest) = cfg.endpoint_url.strip_prefix("mock:") {
        let script = MockScript::parse(rest).ok_or_else(|| {
            EndpointError::Failed(format!(
                "unknown mock script `{rest}` (expected references, baseline, or mixed)"
            ))
        })?;
        return Ok(Box::new(SuiteMockEndpoint::new(suite, script)));
    }
    if cfg.endpoint_url.starts_with("http://") || cfg.endpoint_url.starts_with("https://") {
        return Ok(Box::new(HttpEndpoint::new(
            &cfg.endpoint_url,
            cfg.request_timeout_secs,
        )?));
    }
    Err(EndpointError::Failed(format!(
        "endpoint_url `{}` is neither mock:<script> nor http(s)",
        cfg.endpoint_url
    )))
}
