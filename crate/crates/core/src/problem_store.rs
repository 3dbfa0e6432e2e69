//! On-disk problem bundles and suites.
//!
//! A bundle is a directory holding one benchmark problem:
//!
//! ```text
//! p017_trailing_zeros/
//!   manifest       TOML: id, difficulty, source, sequential, tags, file map
//!   prompt.txt     natural-language task description
//!   header.v       fixed module interface every design must expose
//!   unopt.v        working but unoptimized baseline
//!   opt_area.v     expert reference optimized for area
//!   opt_delay.v    expert reference optimized for delay
//!   opt_power.v    expert reference optimized for power
//!   testbench.v    self-checking bench instantiating opt_model + unopt_model
//! ```
//!
//! The manifest may point two reference roles at the same file (a single
//! expert design that is best for both area and power is common); the loaded
//! [`ReferenceSet`] records that aliasing instead of flattening it away.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metric::{MetricKind, MetricVector};
use crate::verilog;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{bundle}: missing component `{component}` (expected at {path})")]
    MissingComponent {
        bundle: String,
        component: String,
        path: PathBuf,
    },
    #[error("{path}: malformed manifest: {detail}")]
    MalformedManifest { path: PathBuf, detail: String },
    #[error("{bundle}: `{role}` ports {found:?} do not match header ports {expected:?}")]
    HeaderMismatch {
        bundle: String,
        role: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("{bundle}: {detail}")]
    BadBundle { bundle: String, detail: String },
    #[error("duplicate problem id `{0}` in suite")]
    DuplicateId(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One optimized reference: its source text plus the bundle-relative file it
/// was loaded from (kept so aliasing stays observable and round-trips).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub src: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub area: ReferenceEntry,
    pub delay: ReferenceEntry,
    pub power: ReferenceEntry,
}

impl ReferenceSet {
    pub fn get(&self, kind: MetricKind) -> &ReferenceEntry {
        match kind {
            MetricKind::Area => &self.area,
            MetricKind::Delay => &self.delay,
            MetricKind::Power => &self.power,
        }
    }

    /// Pairs of roles that share the same underlying file.
    pub fn aliased_pairs(&self) -> Vec<(MetricKind, MetricKind)> {
        let mut out = Vec::new();
        let all = MetricKind::ALL;
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                if self.get(all[i]).file == self.get(all[j]).file {
                    out.push((all[i], all[j]));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemBundle {
    pub id: String,
    pub difficulty: Difficulty,
    /// Provenance label for the problem (which collection it came from).
    pub source: String,
    pub prompt: String,
    pub module_header: String,
    pub unoptimized_src: String,
    pub references: ReferenceSet,
    pub testbench_src: String,
    pub is_sequential: bool,
    pub tags: Vec<String>,
}

impl ProblemBundle {
    /// Canonical DUT name, taken from the interface header.
    pub fn dut_name(&self) -> String {
        verilog::find_modules(&self.module_header)
            .first()
            .map(|m| m.name.clone())
            .unwrap_or_else(|| "dut".to_string())
    }

    pub fn header_ports(&self) -> Vec<String> {
        verilog::find_modules(&self.module_header)
            .first()
            .map(|m| m.ports.clone())
            .unwrap_or_default()
    }

    pub fn reference_src(&self, kind: MetricKind) -> &str {
        &self.references.get(kind).src
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdPolicyKind {
    /// T for each metric is the unoptimized baseline's measured value under
    /// the run's backend and strategy.
    UnoptBaseline,
    /// T comes from per-problem overrides in the suite manifest; problems
    /// without an override fall back to the baseline measurement.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub kind: ThresholdPolicyKind,
    #[serde(default)]
    pub overrides: BTreeMap<String, MetricVector>,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy {
            kind: ThresholdPolicyKind::UnoptBaseline,
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub name: String,
    /// Bundles sorted by id; load order in the manifest is irrelevant.
    pub bundles: Vec<ProblemBundle>,
    pub thresholds: ThresholdPolicy,
    /// Directory the suite manifest lives in.
    pub root: PathBuf,
}

impl Suite {
    pub fn bundle(&self, id: &str) -> Option<&ProblemBundle> {
        self.bundles.iter().find(|b| b.id == id)
    }
}

// Serde shapes for the on-disk manifests.

#[derive(Debug, Serialize, Deserialize)]
struct BundleManifest {
    id: String,
    difficulty: Difficulty,
    #[serde(default)]
    source: String,
    #[serde(default)]
    sequential: bool,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    files: FileMap,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct FileMap {
    prompt: String,
    header: String,
    unopt: String,
    testbench: String,
    references: RefMap,
}

impl Default for FileMap {
    fn default() -> Self {
        FileMap {
            prompt: "prompt.txt".into(),
            header: "header.v".into(),
            unopt: "unopt.v".into(),
            testbench: "testbench.v".into(),
            references: RefMap::default(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct RefMap {
    area: String,
    delay: String,
    power: String,
}

impl Default for RefMap {
    fn default() -> Self {
        RefMap {
            area: "opt_area.v".into(),
            delay: "opt_delay.v".into(),
            power: "opt_power.v".into(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SuiteManifest {
    name: String,
    bundles: Vec<String>,
    #[serde(default)]
    thresholds: ThresholdsSection,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ThresholdsSection {
    #[serde(default)]
    policy: Option<ThresholdPolicyKind>,
    #[serde(default)]
    overrides: BTreeMap<String, MetricVector>,
}

fn read_component(
    dir: &Path,
    bundle: &str,
    component: &str,
    file: &str,
) -> Result<String, StoreError> {
    let path = dir.join(file);
    fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            StoreError::MissingComponent {
                bundle: bundle.to_string(),
                component: component.to_string(),
                path,
            }
        } else {
            StoreError::Io { path, source: e }
        }
    })
}

fn check_ports(
    bundle: &str,
    role: &str,
    src: &str,
    header_ports: &[String],
) -> Result<(), StoreError> {
    let modules = verilog::find_modules(src);
    let Some(top) = verilog::pick_top(&modules, header_ports) else {
        return Err(StoreError::BadBundle {
            bundle: bundle.to_string(),
            detail: format!("`{role}` contains no module declaration"),
        });
    };
    let want: std::collections::BTreeSet<&str> =
        header_ports.iter().map(|s| s.as_str()).collect();
    if top.port_set() != want {
        return Err(StoreError::HeaderMismatch {
            bundle: bundle.to_string(),
            role: role.to_string(),
            expected: header_ports.to_vec(),
            found: top.ports.clone(),
        });
    }
    Ok(())
}

/// Loads one bundle directory, enforcing the structural invariants: all
/// components present, header parseable, and every design exposing exactly
/// the header's ports.
pub fn load_bundle(dir: &Path) -> Result<ProblemBundle, StoreError> {
    let label = dir.display().to_string();
    let manifest_path = dir.join("manifest");
    let manifest_text = fs::read_to_string(&manifest_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            StoreError::MissingComponent {
                bundle: label.clone(),
                component: "manifest".into(),
                path: manifest_path.clone(),
            }
        } else {
            StoreError::Io { path: manifest_path.clone(), source: e }
        }
    })?;
    let manifest: BundleManifest = toml::from_str(&manifest_text).map_err(|e| {
        StoreError::MalformedManifest {
            path: manifest_path.clone(),
            detail: e.to_string(),
        }
    })?;
    if manifest.id.trim().is_empty() {
        return Err(StoreError::MalformedManifest {
            path: manifest_path,
            detail: "empty id".into(),
        });
    }
    let id = manifest.id.clone();

    let prompt = read_component(dir, &id, "prompt", &manifest.files.prompt)?;
    let module_header = read_component(dir, &id, "header", &manifest.files.header)?;
    let unoptimized_src = read_component(dir, &id, "unopt", &manifest.files.unopt)?;
    let testbench_src = read_component(dir, &id, "testbench", &manifest.files.testbench)?;
    let refs = &manifest.files.references;
    let references = ReferenceSet {
        area: ReferenceEntry {
            src: read_component(dir, &id, "opt_area", &refs.area)?,
            file: refs.area.clone(),
        },
        delay: ReferenceEntry {
            src: read_component(dir, &id, "opt_delay", &refs.delay)?,
            file: refs.delay.clone(),
        },
        power: ReferenceEntry {
            src: read_component(dir, &id, "opt_power", &refs.power)?,
            file: refs.power.clone(),
        },
    };

    let header_modules = verilog::find_modules(&module_header);
    let Some(header_top) = header_modules.first() else {
        return Err(StoreError::BadBundle {
            bundle: id,
            detail: "header contains no module declaration".into(),
        });
    };
    let header_ports = header_top.ports.clone();

    check_ports(&id, "unopt", &unoptimized_src, &header_ports)?;
    for kind in MetricKind::ALL {
        check_ports(
            &id,
            &format!("opt_{kind}"),
            &references.get(kind).src,
            &header_ports,
        )?;
    }

    Ok(ProblemBundle {
        id,
        difficulty: manifest.difficulty,
        source: manifest.source,
        prompt,
        module_header,
        unoptimized_src,
        references,
        testbench_src,
        is_sequential: manifest.sequential,
        tags: manifest.tags,
    })
}

/// Writes a bundle back out using the reference file names recorded at load
/// (aliased roles stay aliased). `load_bundle . save_bundle` is identity.
pub fn save_bundle(bundle: &ProblemBundle, dir: &Path) -> Result<(), StoreError> {
    let io_err = |path: PathBuf, e: std::io::Error| StoreError::Io { path, source: e };
    fs::create_dir_all(dir).map_err(|e| io_err(dir.to_path_buf(), e))?;
    let write = |file: &str, contents: &str| -> Result<(), StoreError> {
        let path = dir.join(file);
        fs::write(&path, contents).map_err(|e| io_err(path, e))
    };
    write("prompt.txt", &bundle.prompt)?;
    write("header.v", &bundle.module_header)?;
    write("unopt.v", &bundle.unoptimized_src)?;
    write("testbench.v", &bundle.testbench_src)?;
    for kind in MetricKind::ALL {
        let entry = bundle.references.get(kind);
        write(&entry.file, &entry.src)?;
    }
    let manifest = BundleManifest {
        id: bundle.id.clone(),
        difficulty: bundle.difficulty,
        source: bundle.source.clone(),
        sequential: bundle.is_sequential,
        tags: bundle.tags.clone(),
        files: FileMap {
            references: RefMap {
                area: bundle.references.area.file.clone(),
                delay: bundle.references.delay.file.clone(),
                power: bundle.references.power.file.clone(),
            },
            ..FileMap::default()
        },
    };
    let text = toml::to_string_pretty(&manifest).map_err(|e| StoreError::MalformedManifest {
        path: dir.join("manifest"),
        detail: e.to_string(),
    })?;
    write("manifest", &text)
}

/// Loads a suite manifest and all bundles it lists. Bundle paths are
/// resolved relative to the manifest's directory; the result is sorted by
/// problem id so manifest order never changes scoring or reports.
pub fn load_suite(manifest_path: &Path) -> Result<Suite, StoreError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| StoreError::Io {
        path: manifest_path.to_path_buf(),
        source: e,
    })?;
    let manifest: SuiteManifest =
        toml::from_str(&text).map_err(|e| StoreError::MalformedManifest {
            path: manifest_path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let root = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();

    let mut bundles = Vec::with_capacity(manifest.bundles.len());
    for rel in &manifest.bundles {
        bundles.push(load_bundle(&root.join(rel))?);
    }
    bundles.sort_by(|a, b| a.id.cmp(&b.id));
    for pair in bundles.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(StoreError::DuplicateId(pair[0].id.clone()));
        }
    }

    Ok(Suite {
        name: manifest.name,
        bundles,
        thresholds: ThresholdPolicy {
            kind: manifest
                .thresholds
                .policy
                .unwrap_or(ThresholdPolicyKind::UnoptBaseline),
            overrides: manifest.thresholds.overrides,
        },
        root,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub bundle: String,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Re-checks a loaded bundle and lints the testbench contract: it must
/// instantiate both `opt_model` and `unopt_model` and emit the verdict
/// tokens the transcript parser keys on ("Total mismatches:",
/// "Simulation completed.", "TIMEOUT").
pub fn validate_bundle(bundle: &ProblemBundle) -> ValidationReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(Check { name: name.to_string(), passed, detail });
    };

    push("id-nonempty", !bundle.id.trim().is_empty(), String::new());
    push("prompt-nonempty", !bundle.prompt.trim().is_empty(), String::new());

    let header_mods = verilog::find_modules(&bundle.module_header);
    let header_ok = !header_mods.is_empty();
    push(
        "header-has-module",
        header_ok,
        if header_ok { String::new() } else { "no module declaration in header".into() },
    );
    let header_ports = bundle.header_ports();
    push(
        "header-has-ports",
        !header_ports.is_empty(),
        format!("ports: {header_ports:?}"),
    );

    let port_check = |role: &str, src: &str| {
        let ok = check_ports(&bundle.id, role, src, &header_ports).is_ok();
        (ok, if ok { String::new() } else { format!("`{role}` port set differs from header") })
    };
    let (ok, detail) = port_check("unopt", &bundle.unoptimized_src);
    push("ports-unopt", ok, detail);
    for kind in MetricKind::ALL {
        let role = format!("opt_{kind}");
        let (ok, detail) = port_check(&role, &bundle.references.get(kind).src);
        push(&format!("ports-{role}"), ok, detail);
    }

    for (name, inst) in [
        ("testbench-instantiates-opt-model", "opt_model"),
        ("testbench-instantiates-unopt-model", "unopt_model"),
    ] {
        let ok = verilog::instantiates(&bundle.testbench_src, inst);
        push(name, ok, if ok { String::new() } else { format!("no `{inst}` instance") });
    }

    for (name, token) in [
        ("testbench-token-mismatches", "Total mismatches:"),
        ("testbench-token-completed", "Simulation completed."),
        ("testbench-token-timeout", "TIMEOUT"),
    ] {
        let ok = bundle.testbench_src.contains(token);
        push(name, ok, if ok { String::new() } else { format!("missing `{token}`") });
    }

    ValidationReport { bundle: bundle.id.clone(), checks }
}
