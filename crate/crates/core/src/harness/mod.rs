//! Metrics, experiment configuration and the experiment runner.

pub mod config;
pub mod metrics;
pub mod runner;

pub use config::{BuiltEnv, ExperimentConfig, LoadedExperiment, OptimizerSpec, PlannerSpec, TaskFile, PLANNERS};
pub use metrics::{goal_fraction, w_min, StepRecord, TaskResult};
pub use runner::{
    episode_seed, recompute_metrics, run_experiment, summarize, CellResult, ExperimentOutput, RecomputedMetrics,
    RunOptions, SummaryRow,
};
