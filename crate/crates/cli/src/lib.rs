//! Config-driven experiments: variance against α, MSE against Δt at a fixed
//! gradient budget, closed-form Gaussian curves and reference values, each
//! written as a CSV table.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{ConfigError, Experiment, ExperimentConfig, NamedParams, RunLength};
pub use output::{ResultRow, Table};
pub use runner::{analytic, mh_study, reference, sweep_alpha, sweep_dt, RunError, SweepOutput};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const ALL_BLOWN_UP: i32 = 3;
}
