//! Benchmark registry, experiment configuration and the `mca` subcommands.

pub mod commands;
pub mod config;
pub mod registry;

pub use commands::{Invocation, SolveKind};
pub use config::{ExperimentConfig, LoadedConfig, ModelRef};
pub use registry::{lookup, Benchmark, BENCHMARK_IDS};

use crate::error::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Process exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}
