//! Library side of the `prtrade` command: configuration, CSV output and the
//! subcommand implementations.

pub mod commands;
pub mod config;
pub mod csvout;
pub mod error;

pub use config::ExperimentConfig;
pub use csvout::CsvRow;
pub use error::{exit, CliError};
