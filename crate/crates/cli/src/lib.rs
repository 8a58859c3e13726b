//! Experiment runner for the `fedhist` simulator.
//!
//! Configs are TOML files (flat keys plus optional `[data]`, `[speed]` and
//! `[isolate]` tables); any key can be overridden from the command line with
//! a dotted path, e.g. `--set speed.max=5`.

use std::io;
use std::path::PathBuf;

pub mod commands;
pub mod report;
pub mod settings;

pub use commands::{compare, gen_data, run, run_cells, CellResult, GenDataArgs};
pub use report::{CompareRow, MetricsRow, Summary};
pub use settings::{load_config, parse_config, parse_override};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fedhist::Error),
    #[error("{}: {message}", path.display())]
    ConfigFile { path: PathBuf, message: String },
    #[error("invalid override `{spec}`: {message}")]
    Override { spec: String, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed {what} at line {line}: {message}")]
    Malformed { what: &'static str, line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}
