//! Train, evaluate, gradient-check and inspect slow-fast hyper-kernel models
//! from JSON run configurations.

pub mod commands;
pub mod config;
pub mod error;
pub mod pgm;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
