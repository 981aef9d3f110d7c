//! Desk-scale fine-tuning experiments on planted targets.
//!
//! A frozen linear layer `W x + b` is adapted by either a Monarch adapter
//! or a LoRA adapter so that it matches a target weight `W̄` that differs
//! from `W` by a planted delta. Because the delta is known, recovery can be
//! measured exactly instead of through a proxy benchmark.

mod adam;
mod config;
mod records;
mod stats;
mod sweep;
mod task;
mod train;

pub use adam::Adam;
pub use config::{AdapterSpec, OptimizerConfig, TaskSpec, TrainConfig};
pub use records::{format_records, RunRecord, RECORD_HEADER};
pub use stats::{weight_stats, FactorStats, Histogram, WeightStats, HISTOGRAM_BINS};
pub use sweep::{sweep, SweepConfig, SweepEntry, SweepGrid};
pub use task::{make_planted_task, PlantedTask, TaskKind};
pub use train::{train, train_with_model, TrainOutcome, DIVERGENCE_FACTOR, LOG_EVERY};
