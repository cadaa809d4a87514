//! Command-line plumbing for `nvlink`: the `TTAG` binary format, JSON run
//! configs and manifests, CSV histograms and the subcommands that tie the
//! simulator, correlator and fitters together.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 non-convergence,
//! 1 anything else (such as an unwritable output).

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod tables;
pub mod ttag;

pub use error::CliError;
