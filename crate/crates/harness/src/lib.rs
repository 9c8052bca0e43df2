//! Experiment harness: configuration presets, the staged pipeline, persisted
//! artifacts, metrics export and the multi-seed studies.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod stats;
pub mod studies;

pub use config::{ExperimentConfig, Preset};
pub use error::{HarnessError, Result};
