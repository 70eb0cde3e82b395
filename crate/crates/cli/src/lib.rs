//! Library surface of the batch CLI: run configuration and the
//! command implementations, kept callable for integration tests.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_analyze, cmd_evaluate, cmd_phantom, cmd_register, cmd_sweep, CliError, PhantomOptions,
};
pub use config::RunConfig;
