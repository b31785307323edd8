//! Library half of the `surveycalib` command-line tool.
//!
//! The binary in `main.rs` is a thin shell: it parses arguments and maps
//! failures to exit codes. Everything with logic worth testing lives here —
//! argument definitions, experiment configuration, CSV input/output, and
//! the command implementations.

pub mod args;
pub mod commands;
pub mod config;
pub mod fail;
pub mod io;
