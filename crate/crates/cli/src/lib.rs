//! Command implementations behind the `critic-pi2` binary.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::Precision;
pub use config::{parse_config, ConfigError};
