//! Evaluation harness for LLM-generated Verilog that scores candidates on
//! post-synthesis efficiency (area, delay, power), not just functional
//! correctness.
//!
//! The crate is organized around a fixed flow:
//!
//! 1. [`problem_store`] loads problem bundles (prompt, fixed module header,
//!    unoptimized baseline, per-metric optimized references, testbench).
//! 2. [`codegen`] builds prompts, queries a chat-completion endpoint, and
//!    extracts Verilog from raw responses.
//! 3. [`sim`] composes candidate + baseline + testbench into a simulation
//!    unit and classifies transcripts into verdicts.
//! 4. [`synth`] drives a synthesis backend (external tool or deterministic
//!    mock) and parses area/delay/power out of its reports.
//! 5. [`metrics`] turns verdicts and measurements into efficiency scores and
//!    the pass@k / eff@k suite estimators.
//! 6. [`report`] renders score tables, quadrant/Pareto/distribution exports.
//! 7. [`ablation`] sweeps backends x designs x strategies for agreement
//!    checks across tools.
//! 8. [`pipeline`] ties the stages together behind an append-only record log
//!    so interrupted runs resume without recomputing finished work.

pub mod ablation;
pub mod codegen;
pub mod config;
pub mod exec;
pub mod metric;
pub mod metrics;
pub mod pipeline;
pub mod problem_store;
pub mod record;
pub mod report;
pub mod sim;
pub mod synth;
pub mod verilog;

pub use metric::{MetricKind, MetricVector};
