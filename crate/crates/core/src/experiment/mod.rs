//! Sweep configuration, orchestration and result files.

pub mod config;
pub mod plot;
pub mod results;
pub mod runner;

pub use config::{parse_config, ExperimentConfig, ExperimentKind, DESK_RETRAINS, FULL_SCALE_RETRAINS};
pub use results::{format_sig6, read_results_csv, write_results_csv, ResultRow, RetrainIndex, RESULT_COLUMNS};
pub use runner::{
    evaluate_checkpoint_row, evaluate_only, row_from_report, run_experiment, worker_count, worker_pool,
    EvalOverrides, RunOutput, WORKERS_ENV,
};
