//! Experiment configuration, macro-replication fan-out and CSV output.

mod config;
mod run;
mod table;

pub use config::{geometric_checkpoints, AnalyticTable, ExperimentConfig, PolicyConfig, ProblemConfig};
pub use run::{fixed_allocation_trace, largest_remainder, run_experiment, run_fixed_allocation, Experiment};
pub use table::{load_pfs_csv, read_pfs_csv, save_pfs_csv, write_pfs_csv, CSV_HEADER};
