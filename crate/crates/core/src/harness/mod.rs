//! Experiment plumbing: configuration, file formats, runs and sweeps.

pub mod config;
pub mod experiment;
pub mod io;

pub use config::ExperimentConfig;
pub use experiment::{generate_dataset, pod_report, PodReport, run_experiment, run_sweep, ExperimentRun, Summary, SweepGrid, SweepRow};
