//! Event-camera dense reconstruction driver: configuration, resumable stage
//! orchestration and the command-line front end's building blocks.

pub mod artifact;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod pipeline;
pub mod run;
pub mod simulate;
pub mod tools;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
pub use pipeline::{Pipeline, PipelineReport, Stage, StageStatus};
