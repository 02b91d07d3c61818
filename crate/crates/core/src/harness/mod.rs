//! Experiment harness: configuration, training runs, evaluation, CSV
//! output and plots.

pub mod config;
pub mod eval;
pub mod metrics;
pub mod plot;
pub mod run;

pub use config::{ExperimentConfig, DEFAULT_BUDGET};
pub use eval::{evaluate_episodes, evaluate_policy};
pub use metrics::{EvalRecord, IterationRecord, MetricsLog, PolicyTag};
pub use plot::emit_plots;
pub use run::{compare, run_training, sweep, train_vs_diversity, DiversityRow, SweepResult, SweepRow};
