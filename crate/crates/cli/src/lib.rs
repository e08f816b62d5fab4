//! Configuration, staged execution, and caching for the `conceptsim`
//! command line: synthetic data, concept extraction, cross-model
//! comparison, layerwise similarity, and reports.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod store;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
