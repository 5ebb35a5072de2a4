//! Command-line front end: config parsing, the artifact store and the
//! subcommands of the `provlab` binary.

pub mod commands;
pub mod config;
pub mod store;
