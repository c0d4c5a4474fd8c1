//! Experiment harnesses for elephant networks: streaming sine regression,
//! class-incremental MNIST and DQN on classic control, plus the config,
//! runner and sweep machinery the command line tool drives.

pub mod classify;
pub mod config;
pub mod error;
pub mod regression;
pub mod rl;
pub mod runner;
pub mod sweep;

pub use config::{ExperimentConfig, Harness};
pub use error::{ExpError, Result};
pub use runner::{run_experiment, DataCache, RunReport};
pub use sweep::{parse_grid, sweep, SweepResult};
