//! Experiment harness for loadkit: end-to-end runs, parameter sweeps,
//! dataset pool benchmarks and summary comparisons.

pub mod cli;
pub mod compare;
pub mod config;
pub mod error;
pub mod experiment;
pub mod pool_bench;
pub mod sweep;

pub use compare::{compare_report, Comparison};
pub use config::{ConfigFile, ExperimentConfig};
pub use error::HarnessError;
pub use experiment::{run_experiment, run_experiment_full, RunOutput};
pub use pool_bench::run_dataset_pool_bench;
pub use sweep::{run_sweep, SweepSpec};
