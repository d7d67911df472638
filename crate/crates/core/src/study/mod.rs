//! Expanding-window forecasting study: configuration, task grid, model runs,
//! evaluation and report files.

pub mod config;
pub mod metrics;
pub mod records;
pub mod report;
pub mod run;
pub mod tasks;

pub use config::{Averaging, ConfigError, Model, StudyConfig};
pub use metrics::{
    evaluate_forecasts, load_metrics, write_evaluation, write_metrics, Evaluation, EvaluationError, MetricRow,
};
pub use records::{load_forecasts, read_forecasts, save_forecasts, write_forecasts, Fallback, ForecastRow, Variant};
pub use report::write_report;
pub use run::{build_store, run_study, write_study_outputs, StudyError, StudyOutput};
pub use tasks::{enumerate_tasks, TaskError, TaskPlan};
