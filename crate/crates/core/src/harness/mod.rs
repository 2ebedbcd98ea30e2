//! Scenario orchestration: nested control loops, fault injection with a
//! detection latency, online GP learning, metrics, comparisons, Monte Carlo
//! sweeps and file output.

mod config;
mod emit;
mod metrics;
mod sim;
mod trajectory;

#[cfg(test)]
mod scenario_tests;

pub use config::{
    BoundsConfig, FaultConfig, GpConfig, KernelSharing, NoiseConfig, PairingEntry, ScenarioConfig, TiltConfig,
    VehicleConfig, SCHEMA_VERSION,
};
pub use emit::{emit, write_key_values, write_log_csv, EmittedFiles, LOG_HEADER};
pub use metrics::{
    compare_runs, compute_metrics, monte_carlo, Comparison, MetricsReport, MonteCarloReport, SeedOutcome,
};
pub use sim::{run_scenario, LogRow, RunStatus, ScenarioLog, TrainingRecord};
pub use trajectory::{Reference, Trajectory, TrajectoryConfig, TrajectoryError};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Output(String),
    #[error("run failed: {0}")]
    Run(String),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 1,
        }
    }
}
