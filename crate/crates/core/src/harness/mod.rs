//! Experiment configuration, orchestration and reporting.

mod config;
mod pipeline;
mod report;

pub use config::{Attacker, DatasetConfig, ExperimentConfig, MinerParams, OneOrMany};
pub use pipeline::{derive_seed, load_summary, run_pipeline, sha256_file, write_json, Artifacts};
pub use report::{
    audit_budgets, emit_report, format_drop, relative_drops, ConfidenceShift, DatasetInfo, PlanInfo, ReportFormat,
    RuleInfo, RunRecord, RunSummary, CSV_COLUMNS,
};
