//! Stage-oriented driver for the dark-spot segmentation pipeline.
//!
//! Each stage reads the artifacts of earlier stages from a run directory
//! and records what it wrote in the run manifest; see [`pipeline`].

pub mod cache;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{EvalSummary, Run, StageStatus};
