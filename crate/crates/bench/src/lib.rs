//! Throughput harness for the PathCAS trees: prefill half the key range, run
//! a timed mixed workload on N threads, then validate the tree.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{ConfigError, DsKind, ExperimentConfig, Format};
pub use report::{emit, ExperimentReport, TrialReport};
pub use runner::{prefill, run_experiment, run_trial};
