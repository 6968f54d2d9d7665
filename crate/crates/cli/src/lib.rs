//! Experiment runner: configuration, seeded Monte-Carlo orchestration,
//! artifact directories and the acceptance suites.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod verify;

pub use config::{Experiment, ExperimentConfig};
pub use error::CliError;
