//! Command-line runner: explanation rendering, evaluation reports, summaries
//! and benchmarks on top of `paircam-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod render;
pub mod report;
pub mod sources;
pub mod tensorfile;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};
