//! Experiment orchestration: spec files, CSV ingestion, splits,
//! cross-validation, replicated runs and reports.

pub mod cv;
pub mod experiment;
pub mod fit;
pub mod ingest;
pub mod report;
pub mod spec;
pub mod split;

pub use cv::{cross_validate, CvOutcome, GridScore};
pub use experiment::{run_experiment, ExperimentOutcome, Failure};
pub use ingest::{ingest_csv, Standardizer};
pub use report::{emit_report, read_rows, summarize, MetricsRow, ReportFormat};
pub use spec::{ExperimentSpec, Hyper, MethodSpec, Model};
pub use split::kfold_split;
