//! Dataset ingestion, prompt-sweep evaluation, metrics and report files.

mod dataset;
mod evaluate;
mod metrics;
mod report;

pub use dataset::{load_dataset, parse_dataset};
pub use evaluate::{evaluate, EvalOptions, Method};
pub use metrics::{cross_prompt_std, flops_estimate, mean, sample_std, FlopsParams, StdKind};
pub use report::{
    emit_report, parse_report, read_report, render_report, EvaluationReport, PromptResult,
    ReportFormat,
};
