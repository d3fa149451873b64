//! The `satl` command line: data generation, source training, source-free
//! adaptation, evaluation, the end-to-end direction run and gradient checks.

pub mod commands;
pub mod config;
pub mod exit;

pub use commands::{run, Cli, Command};
pub use config::RunConfig;
pub use exit::Status;
