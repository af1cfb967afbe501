//! Experiment orchestration behind the `quantsweep` binary: configuration,
//! the sweep / analyze / bench / quantize / inpaint commands, and persistent,
//! reproducible outputs.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
//! files, bad configuration), 3 internal error.

mod analyze;
mod benchcmd;
mod commands;
mod config;
mod sweep;
mod toyworld;

pub use analyze::{analyze_matrix, cmd_analyze, render_table, AnalysisReport, ColumnReport, PairwiseEntry};
pub use benchcmd::{cmd_bench, BenchReport};
pub use commands::{ascii_render, cmd_inpaint, cmd_quantize};
pub use config::{ExperimentConfig, StatsConfig};
pub use sweep::{cmd_sweep, render_results_csv, RunRecord, SweepCell, SweepReport};
pub use toyworld::{build_world, render_patch, ToyWorld};

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}
