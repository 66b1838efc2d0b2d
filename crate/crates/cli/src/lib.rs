//! Configuration handling and subcommand implementations behind `rtopf`.

pub mod commands;
pub mod config;

pub use config::{exit_code, Context, Failure, Overrides, RunConfig, Split};
