//! Experiment harness: configuration, multi-seed execution, aggregation
//! and result files.

pub mod aggregate;
pub mod config;
pub mod experiment;

pub use aggregate::{aggregate, CurvePoint, Metric};
pub use config::{EvalConfig, ExperimentConfig, ExperimentKind, TransferConfig};
pub use experiment::{aggregate_dir, run_experiment, CellSummary, Stat, Summary};
