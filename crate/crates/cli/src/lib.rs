//! Library surface of the `hdrunet` binary: the subcommand
//! implementations and the config-file parser, exposed so integration
//! tests can drive them in-process.

pub mod commands;
pub mod config;
