//! Experiment driver for the `hypermf` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;
pub mod specs;
pub mod studies;
pub mod svg;

pub use commands::{run, Command, Report};
pub use config::Config;

/// Process exit code for a library error: 2 for invalid input or failed
/// validation, 3 for resource limits, 1 otherwise.
pub fn exit_code(e: &hypermf::Error) -> i32 {
    use hypermf::Error::*;
    match e {
        Parse { .. } | Parameter(_) | Validation(_) | Config(_) | Cfl { .. } => 2,
        Resource(_) => 3,
        NonFinite(_) | Io(_) => 1,
    }
}
