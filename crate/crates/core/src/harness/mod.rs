//! Experiment orchestration: configs, oracle statistics, trial sweeps,
//! policy training and CSV output.

pub mod config;
pub mod csv;
pub mod experiment;
pub mod oracle;
pub mod seeds;
pub mod training;

pub use config::ExperimentConfig;
pub use csv::{write_csv, ResultRow, RowStatus, CSV_HEADER};
pub use experiment::{run_experiment, step_size_sensitivity, ExperimentOutput, TuningResult};
pub use oracle::{oracle_mspbe_stats, OracleCache};
pub use training::train_mountain_car_policy;
