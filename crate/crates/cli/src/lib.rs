//! Experiment harness for the pessimistic multi-agent model-based RL
//! traffic study: run/sweep/plot/boundlab commands over the core crate.

pub mod config;
pub mod plot;
pub mod report;
pub mod runner;
pub mod sweep;

pub use config::{Algorithm, ExperimentConfig};
pub use runner::{run, RunArtifacts};
pub use sweep::{sweep, DEFAULT_SEEDS};
