//! Files, configuration and the command line for mean-variance efficient
//! collaborative filtering. The models live in `mvecf-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod model_io;
pub mod pipeline;

pub use config::{ExperimentConfig, ModelKind};
pub use error::{CliError, Result};
