//! Command implementations behind the `retrainbench` binary.
//!
//! * [`config`] - the TOML run configuration and its validation.
//! * [`run`] - executes a backtest grid and writes every artifact.
//! * [`report`] - SVG charts and a text summary from an artifact directory.
//! * [`synth`] - writes a synthetic panel as CSV.

pub mod config;
pub mod report;
pub mod run;
pub mod synth;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    /// Some grid cells failed; artifacts cover the successful ones.
    #[error("{failed} of {total} grid cells failed")]
    PartialGrid { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::PartialGrid { .. } => 3,
        }
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}
