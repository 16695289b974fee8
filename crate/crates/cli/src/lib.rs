//! Command line front end: configuration, the artifact layout and one
//! function per subcommand.

pub mod artifacts;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod strategy;

pub use cli::Cli;
pub use config::RunConfig;
pub use error::{exit_code, UserError, EXIT_INTERNAL, EXIT_OK, EXIT_USER};
pub use strategy::StrategyId;
