//! Functional verification of one candidate against the bundle baseline.
//!
//! Every bundle's testbench instantiates the candidate as `opt_model` and
//! the baseline as `unopt_model`, compares outputs, and reports through a
//! fixed set of transcript tokens:
//!
//! * `Total mismatches: N` and `Simulation completed.` on a finished run,
//! * `TIMEOUT` from the bench's own watchdog.
//!
//! [`parse_verdict`] is the single classification point for transcripts; the
//! external runner and the mock simulator both funnel through it. The
//! harness appends its own `COMPILE FAILED` marker to compiler output so the
//! parser stays a pure function of one text.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::exec;
use crate::problem_store::ProblemBundle;
use crate::verilog;

/// Marker the harness appends to a failed compile's transcript.
pub const COMPILE_FAILED_MARKER: &str = "COMPILE FAILED";

#[derive(Debug, thiserror::Error)]
pub enum SimEnvError {
    #[error("simulator `{0}` not installed or not on PATH")]
    SimulatorNotFound(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("candidate source: {0}")]
    BadCandidate(#[from] verilog::VerilogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "count", rename_all = "snake_case")]
pub enum SimStatus {
    Pass,
    Mismatch(u64),
    Timeout,
    CompileError,
    RuntimeError,
}

impl SimStatus {
    pub fn label(&self) -> &'static str {
        match self {
            SimStatus::Pass => "pass",
            SimStatus::Mismatch(_) => "mismatch",
            SimStatus::Timeout => "timeout",
            SimStatus::CompileError => "compile_error",
            SimStatus::RuntimeError => "runtime_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimVerdict {
    pub status: SimStatus,
    pub transcript: String,
    pub wall_time_ms: u64,
    /// Retained working directory when artifacts are kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Compile command template; `{sources}` and `{out}` placeholders.
    pub compile_cmd: String,
    /// Run command template; `{exe}` placeholder.
    pub run_cmd: String,
    pub wall_timeout_secs: u64,
    pub keep_artifacts: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            compile_cmd: "iverilog -g2012 -o {out} {sources}".into(),
            run_cmd: "vvp {exe}".into(),
            wall_timeout_secs: 60,
            keep_artifacts: false,
        }
    }
}

/// The three files making up one simulation: candidate renamed to
/// `opt_model`, baseline renamed to `unopt_model`, testbench verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct SimUnit {
    pub files: Vec<(String, String)>,
}

/// Renames the candidate's top module (chosen by header-port match) to
/// `opt_model` and the bundle baseline to `unopt_model`. A baseline already
/// named `unopt_model` passes through byte-identical. Helper modules keep
/// their names; name collisions between candidate helpers and baseline
/// helpers are out of scope for this harness.
pub fn compose_sim_unit(
    candidate_src: &str,
    bundle: &ProblemBundle,
) -> Result<SimUnit, SimEnvError> {
    let ports = bundle.header_ports();
    let candidate = verilog::rename_top(candidate_src, &ports, "opt_model")?;
    let baseline = verilog::rename_top(&bundle.unoptimized_src, &ports, "unopt_model")?;
    Ok(SimUnit {
        files: vec![
            ("opt_model.v".into(), candidate),
            ("unopt_model.v".into(), baseline),
            ("testbench.v".into(), bundle.testbench_src.clone()),
        ],
    })
}

/// Classifies a transcript. Total over arbitrary text; precedence is fixed:
/// compile failure, then the bench watchdog, then the mismatch counter
/// (which also needs the completion line to count as a pass), then
/// "nothing recognizable ran" as a runtime error.
pub fn parse_verdict(transcript: &str) -> SimStatus {
    if transcript.contains(COMPILE_FAILED_MARKER) {
        return SimStatus::CompileError;
    }
    if transcript.contains("TIMEOUT") {
        return SimStatus::Timeout;
    }
    if let Some(idx) = transcript.find("Total mismatches:") {
        let rest = &transcript[idx + "Total mismatches:".len()..];
        let digits: String = rest
            .trim_start()
            .chars()
            .take_while(|c| c.is_ascii_digit())
            .collect();
        if !digits.is_empty() {
            // Absurdly long counts saturate rather than fail.
            let n = digits.parse::<u64>().unwrap_or(u64::MAX);
            if n > 0 {
                return SimStatus::Mismatch(n);
            }
            if transcript.contains("Simulation completed.") {
                return SimStatus::Pass;
            }
        }
    }
    SimStatus::RuntimeError
}

/// Compiles and runs a [`SimUnit`] with an external simulator.
pub fn run_simulation(unit: &SimUnit, cfg: &SimConfig) -> Result<SimVerdict, SimEnvError> {
    let start = std::time::Instant::now();
    let dir = tempfile::Builder::new()
        .prefix("rtleff-sim-")
        .tempdir()
        .map_err(|e| SimEnvError::Io { path: std::env::temp_dir(), source: e })?;
    let mut sources = Vec::new();
    for (name, contents) in &unit.files {
        let path = dir.path().join(name);
        std::fs::write(&path, contents)
            .map_err(|e| SimEnvError::Io { path: path.clone(), source: e })?;
        sources.push(name.clone());
    }

    let timeout = Duration::from_secs(cfg.wall_timeout_secs.max(1));
    let exe = "sim.out".to_string();
    let compile_argv = exec::build_argv(
        &cfg.compile_cmd,
        &[("sources", sources), ("out", vec![exe.clone()])],
    );
    let tool = compile_argv.first().cloned().unwrap_or_default();
    let compile = exec::run_with_timeout(&compile_argv, dir.path(), timeout).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SimEnvError::SimulatorNotFound(tool.clone())
        } else {
            SimEnvError::Io { path: dir.path().to_path_buf(), source: e }
        }
    })?;
    let keep = |d: tempfile::TempDir, keep: bool| if keep { Some(d.keep()) } else { None };
    if !compile.success() {
        let mut transcript = compile.combined();
        transcript.push_str(&format!("\n{COMPILE_FAILED_MARKER}\n"));
        let status = parse_verdict(&transcript);
        return Ok(SimVerdict {
            status,
            transcript,
            wall_time_ms: start.elapsed().as_millis() as u64,
            workdir: keep(dir, cfg.keep_artifacts),
        });
    }

    let run_argv = exec::build_argv(&cfg.run_cmd, &[("exe", vec![exe])]);
    let runner = run_argv.first().cloned().unwrap_or_default();
    let run = exec::run_with_timeout(&run_argv, dir.path(), timeout).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SimEnvError::SimulatorNotFound(runner.clone())
        } else {
            SimEnvError::Io { path: dir.path().to_path_buf(), source: e }
        }
    })?;
    let mut transcript = run.combined();
    if run.timed_out {
        transcript.push_str("\nTIMEOUT (wall clock)\n");
    }
    Ok(SimVerdict {
        status: parse_verdict(&transcript),
        transcript,
        wall_time_ms: start.elapsed().as_millis() as u64,
        workdir: keep(dir, cfg.keep_artifacts),
    })
}

/// Deterministic stand-in for a simulator: a candidate passes exactly when
/// its fingerprint (comments/whitespace/top-name insensitive) matches the
/// bundle baseline or one of the references. The verdict is produced by
/// synthesizing a transcript and running it through [`parse_verdict`], so
/// mock runs exercise the same classification path as real ones.
#[derive(Debug, Clone)]
pub struct MockSim {
    accepted: Vec<String>,
}

impl MockSim {
    pub fn for_bundle(bundle: &ProblemBundle) -> MockSim {
        let mut accepted = vec![verilog::fingerprint(&bundle.unoptimized_src)];
        for kind in crate::metric::MetricKind::ALL {
            accepted.push(verilog::fingerprint(bundle.reference_src(kind)));
        }
        accepted.sort();
        accepted.dedup();
        MockSim { accepted }
    }

    pub fn verdict(&self, candidate_src: &str) -> SimVerdict {
        let fp = verilog::fingerprint(candidate_src);
        let matched = self.accepted.contains(&fp);
        let mismatches = u64::from(!matched);
        let transcript = format!(
            "[mock-sim] fingerprint {}\nSimulation completed.\nTotal mismatches: {mismatches}\n",
            &fp[..16.min(fp.len())]
        );
        SimVerdict {
            status: parse_verdict(&transcript),
            transcript,
            wall_time_ms: 0,
            workdir: None,
        }
    }
}

/// How a run obtains verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SimMode {
    Mock,
    External(SimConfig),
}

impl SimMode {
    pub fn label(&self) -> &'static str {
        match self {
            SimMode::Mock => "mock",
            SimMode::External(_) => "external",
        }
    }

    /// Runs one candidate against the bundle.
    pub fn run(
        &self,
        candidate_src: &str,
        bundle: &ProblemBundle,
    ) -> Result<SimVerdict, SimEnvError> {
        match self {
            SimMode::Mock => Ok(MockSim::for_bundle(bundle).verdict(candidate_src)),
            SimMode::External(cfg) => {
                let unit = compose_sim_unit(candidate_src, bundle)?;
                run_simulation(&unit, cfg)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem_store::{Difficulty, ProblemBundle, ReferenceEntry, ReferenceSet};
    use proptest::prelude::*;

    fn bundle() -> ProblemBundle {
        let design = |name: &str, body: &str| {
            format!("module {name} #(parameter W = 4) (input [W-1:0] din, output dout);\n{body}\nendmodule\n")
        };
        ProblemBundle {
            id: "p_sim".into(),
            difficulty: Difficulty::Easy,
            source: "unit".into(),
            prompt: "reduce".into(),
            module_header: "module reducer #(parameter W = 4) (input [W-1:0] din, output dout);"
                .into(),
            unoptimized_src: design("unopt_model", "assign dout = |din;"),
            references: ReferenceSet {
                area: ReferenceEntry {
                    src: design("unopt_model", "assign dout = din != 0;"),
                    file: "opt_area.v".into(),
                },
                delay: ReferenceEntry {
                    src: design("unopt_model", "assign dout = (|din);"),
                    file: "opt_delay.v".into(),
                },
                power: ReferenceEntry {
                    src: design("unopt_model", "assign dout = din != 0;"),
                    file: "opt_area.v".into(),
                },
            },
            testbench_src: "module testbench; endmodule".into(),
            is_sequential: false,
            tags: vec![],
        }
    }

    #[test]
    fn verdict_tokens() {
        assert_eq!(
            parse_verdict("...\nSimulation completed.\nTotal mismatches: 0\n"),
            SimStatus::Pass
        );
        assert_eq!(
            parse_verdict("Simulation completed.\nTotal mismatches: 17\n"),
            SimStatus::Mismatch(17)
        );
        assert_eq!(parse_verdict("stuff\nTIMEOUT\nmore"), SimStatus::Timeout);
        assert_eq!(parse_verdict(""), SimStatus::RuntimeError);
        assert_eq!(parse_verdict("segfault at 0x0"), SimStatus::RuntimeError);
    }

    #[test]
    fn verdict_precedence() {
        // Compile marker wins over everything.
        let t = format!("TIMEOUT\nTotal mismatches: 3\n{COMPILE_FAILED_MARKER}");
        assert_eq!(parse_verdict(&t), SimStatus::CompileError);
        // Watchdog beats the mismatch counter.
        assert_eq!(
            parse_verdict("Total mismatches: 2\nTIMEOUT"),
            SimStatus::Timeout
        );
        // Zero mismatches without the completion line is not a pass.
        assert_eq!(
            parse_verdict("Total mismatches: 0\n"),
            SimStatus::RuntimeError
        );
        // Counter token without digits is unrecognizable.
        assert_eq!(
            parse_verdict("Total mismatches: none"),
            SimStatus::RuntimeError
        );
        // Interleaved noise around the tokens does not change the verdict.
        assert_eq!(
            parse_verdict("x\nTotal mismatches: 4 (see log)\nSimulation completed.\ny"),
            SimStatus::Mismatch(4)
        );
    }

    #[test]
    fn verdict_saturates_huge_counts() {
        let t = "Simulation completed.\nTotal mismatches: 99999999999999999999999999\n";
        assert_eq!(parse_verdict(t), SimStatus::Mismatch(u64::MAX));
    }

    #[test]
    fn compose_renames_candidate_and_baseline() {
        let b = bundle();
        let candidate =
            "module reducer #(parameter W = 4) (input [W-1:0] din, output dout);\nassign dout = |din;\nendmodule\n";
        let unit = compose_sim_unit(candidate, &b).unwrap();
        assert_eq!(unit.files.len(), 3);
        assert!(unit.files[0].1.contains("module opt_model #(parameter W = 4)"));
        // Baseline is already `unopt_model`: byte-identical passthrough.
        assert_eq!(unit.files[1].1, b.unoptimized_src);
        assert_eq!(unit.files[2].1, b.testbench_src);
    }

    #[test]
    fn compose_rejects_moduleless_candidate() {
        let b = bundle();
        assert!(matches!(
            compose_sim_unit("no hardware here", &b),
            Err(SimEnvError::BadCandidate(_))
        ));
    }

    #[test]
    fn mock_sim_accepts_bundle_designs_only() {
        let b = bundle();
        let mock = MockSim::for_bundle(&b);
        assert_eq!(mock.verdict(&b.unoptimized_src).status, SimStatus::Pass);
        // Renamed + reformatted baseline still passes (fingerprint match).
        let renamed = b
            .unoptimized_src
            .replace("unopt_model", "candidate_name")
            .replace("assign dout", "assign  dout");
        assert_eq!(mock.verdict(&renamed).status, SimStatus::Pass);
        for kind in crate::metric::MetricKind::ALL {
            assert_eq!(mock.verdict(b.reference_src(kind)).status, SimStatus::Pass);
        }
        let other =
            "module x #(parameter W = 4) (input [W-1:0] din, output dout);\nassign dout = ^din;\nendmodule";
        assert_eq!(mock.verdict(other).status, SimStatus::Mismatch(1));
    }

    proptest! {
        #[test]
        fn parse_verdict_is_total(s in "\\PC*") {
            // Any input classifies into exactly one of the five statuses.
            let _ = parse_verdict(&s);
        }

        #[test]
        fn pass_requires_both_tokens(noise in "[a-z \\n]{0,40}") {
            let t = format!("{noise}Simulation completed.\n{noise}Total mismatches: 0\n");
            prop_assert_eq!(parse_verdict(&t), SimStatus::Pass);
        }
    }
}
