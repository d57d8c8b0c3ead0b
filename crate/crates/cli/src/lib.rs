//! Command-line front end for the `otflow` particle transport solver.
//!
//! `otflow <command> --config run.toml` reads a [`config::RunConfig`],
//! runs it and writes tidy CSV plus JSON metadata into the output directory.

pub mod commands;
pub mod config;
pub mod plot;

pub use commands::{run, Outcome};
pub use config::{Command, Overrides, RunConfig};
