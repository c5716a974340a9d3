//! Experiment orchestration: ingestion, the repeated-split protocol,
//! synthetic data, reports and the validation suite.

pub mod experiment;
pub mod ingest;
pub mod report;
pub mod synthetic;
pub mod validate;

pub use crate::data::Dataset;
pub use experiment::{
    ess_matched_baseline, evaluate, run_experiment, run_experiment_on, threads_from_env,
    tilted_subsample, trial_rng, DataSource, ExperimentConfig, Method, MethodReport,
    SplitFractions, TestSet, TrialReport, THREADS_ENV,
};
pub use ingest::{ingest_covariates, ingest_csv, ingest_csv_with, write_csv, IngestOptions, ResponseColumn};
pub use report::{
    emit_report, read_report_csv, read_report_json, summarize, write_report, MethodSummary,
    Report, ReportFormat, ReportRow,
};
pub use synthetic::HeteroskedasticModel;
