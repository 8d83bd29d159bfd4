//! Library side of the `textcnn` binary, exposed for integration tests.

pub mod cli;
pub mod commands;
pub mod config;

pub use cli::{command, run};
pub use config::{load_config, parse_config, RunConfig};
