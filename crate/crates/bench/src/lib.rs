//! Seeded simulation studies for the proxy-transfer estimators: point error
//! against the proxy matrix's condition number, a baseline comparison,
//! interval coverage and runtime.

pub mod config;
pub mod error;
pub mod harness;
pub mod record;
pub mod stats;

pub use config::{Estimator, ExperimentConfig};
pub use error::{BenchError, Result};
pub use harness::{
    draw_model, median_abs_error, run_baseline_comparison, run_coverage, run_point_error, run_runtime, summarize,
    CoverageRow, CoverageStudy, EstimatorSummary, ModelDraw, RuntimeRow,
};
pub use record::{read_records, records_to_string, save_records, write_records, ReplicateRecord};
