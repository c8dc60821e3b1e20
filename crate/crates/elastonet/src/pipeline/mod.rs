//! End-to-end plumbing around the modeling core: configuration files, CSV
//! and SVG artifacts, dataset generation, loading-path drivers, the direct
//! black-box baseline, and preset experiment orchestration.

pub mod baseline;
pub mod config;
pub mod data;
pub mod driver;
pub mod experiment;
pub mod io;

pub use config::{Config, ConfigError};
pub use experiment::{preset_config, run_preset, Experiment, Stage, PRESETS};
pub use io::{CsvTable, TableError};

use crate::network::NetworkError;
use crate::returnmap::ReturnMapError;

/// Indicates a pipeline failure with enough context to locate it
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("no yield detected: {detail}")]
    NoYield { detail: String },
    #[error("step {step} failed: {source}")]
    Step { step: usize, source: ReturnMapError },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("{0}")]
    Invalid(String),
}
