pub mod metrics;
pub mod recall;
pub mod report;

pub use metrics::{mspd, mssd, symmetric_rotation_error, vsd};
pub use report::{records_csv, write_report, EvalSummary, Failure};
pub use recall::{
    average_recall, bootstrap_difference, evaluate_record, EvalRecord, MetricErrors, MetricThresholds, RecallSummary,
};
