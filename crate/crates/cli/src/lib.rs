//! Library surface of the experiment driver: configuration schema and the
//! subcommand implementations, kept callable for integration tests.

pub mod commands;
pub mod config;
