//! Experiment harness: configuration, seeded repeats, grid search, metrics
//! against the analytic benchmark, and Monte-Carlo estimator checks.

mod check;
mod config;
mod experiment;
mod grid;
mod metrics;

pub use check::{
    check_estimators, check_estimators_on, CheckPoint, ESTIMATOR_NAMES, MIN_CHECK_TRIALS, CheckSettings, EstimatorCheck, EstimatorReport,
    ReferenceValues,
};
pub use config::{ExperimentConfig, ParamsConfig, DEFAULT_INIT_BOX};
pub use experiment::{
    initial_state, repeat_seed, run_experiment, run_repeat, ExperimentResult, ExperimentSummary, RepeatOutcome,
    RepeatSummary,
};
pub use grid::{grid_search, lattice, write_grid_result, GridResult, GridSpec, LeaderboardEntry};
pub use metrics::{normalized_gap, BenchmarkMetrics};
