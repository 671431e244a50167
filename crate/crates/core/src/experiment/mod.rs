//! End-to-end inverse-crime experiments: draw a reference field from the
//! prior, measure it, and recover it through the conditional surrogate.

mod compare;
mod config;
mod pipeline;
mod stats;

pub use compare::{compare_strategies, Comparison, ComparisonRow, StrategySummary};
pub use config::{preset, presets, ExperimentConfig, KappaSampling, Problem, Strategy};
pub use pipeline::{
    expand_prior, prepare, run_pipeline, run_strategy, stream_seed, Prepared, RunReport, Stage,
};
pub use stats::{median, spearman};
