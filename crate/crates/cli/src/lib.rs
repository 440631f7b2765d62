//! Configuration, subcommands and report writing for the `photon` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{fields, gauge_demo, shift_scan, verify, Check, Outcome};
pub use config::RunConfig;
pub use error::CliError;
