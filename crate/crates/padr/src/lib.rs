//! Standard-library companion to `padr-core`: synthetic newsvendor data,
//! oracle and baseline decision rules, the benchmark runner, CSV/JSON file
//! formats and the `padr` command-line tool.

pub mod baselines;
pub mod bench;
pub mod cli;
pub mod config;
pub mod demand;
pub mod error;
pub mod io;
pub mod oracle;
pub mod train;

pub use error::{Error, Result};
pub use padr_core as core;
