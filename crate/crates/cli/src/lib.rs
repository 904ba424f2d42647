//! Library side of the `meson` binary: run configuration and the
//! subcommands that turn it into data files.

pub mod commands;
pub mod config;

pub use config::{ConfigError, Format, RunConfig};
