//! Configuration, orchestration and artifact emission for the adarank
//! experiments: the bias/variance lab, AdaRL-vs-SAC training comparisons
//! and rank-criterion traces.

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod plot;

pub use config::{ExperimentConfig, ExperimentKind, LoadedConfig};
pub use error::{HarnessError, Result};
pub use experiments::Method;
