//! Configuration-driven experiments: the adapt-then-switch pipeline, sweeps
//! over injected model error, and reporting.

pub mod config;
pub mod pipeline;
pub mod plot;

pub use config::{parse_config, ConfigError, ExperimentConfig, InitialEstimate};
pub use pipeline::{run_experiment, run_pipeline, sweep_delta, Experiment, RunReport, Sweep, SweepPoint};
pub use plot::emit_plots;
