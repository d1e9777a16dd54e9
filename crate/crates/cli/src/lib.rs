//! Command-line front end: simulate datasets, fit the model, and regenerate
//! summaries from stored draws.

pub mod commands;
pub mod draws_file;
pub mod error;
pub mod io;
pub mod settings;
pub mod tables;

pub use commands::run;
pub use error::{CliError, CliResult};
