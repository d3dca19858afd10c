//! Run logs, submission bundles and result tables.

mod bundle;
mod log;
mod render;

pub use bundle::{
    load_bundle, parse_accuracy, parse_system, validate_submission, write_accuracy, write_bundle,
    write_system, AccuracyResult, BundleError, Check, SubmissionBundle, SubmissionReport, ACCURACY_FILE,
    COMPLIANCE_LOG, PERFORMANCE_LOG, SYSTEM_FILE,
};
pub use log::{
    parse_log, parse_run, parse_verdicts, recompute_summary, run_from_records, run_records, write_log,
    write_run, write_verdicts, LogError, LogRecord, ParsedRun, LOG_FORMAT_VERSION,
};
pub use render::render_report;
