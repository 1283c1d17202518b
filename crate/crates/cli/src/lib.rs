//! Batch runner for the crane lifting experiments: training, evaluation,
//! robustness sweeps, ablations and single-episode demos.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod manifest;
pub mod metrics;
pub mod output;
pub mod run;

pub use commands::Invocation;
pub use config::ExperimentConfig;
