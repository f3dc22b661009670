//! Experiment harness for the Viking filter: configuration, synthetic
//! experiments, grid search, the `n_mc` sweep, CSV output and the CLI.

pub mod cli;
pub mod config;
pub mod csvio;
pub mod error;
pub mod experiment;
pub mod metrics;

pub use config::{Experiment, ExperimentConfig, Method, QShape, Setting};
pub use error::{HarnessError, Result};
