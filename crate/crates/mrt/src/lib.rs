//! Files and command line for `mrt-core`: CSV datasets, checkpoints, run
//! configuration, report tables and the `mrt` executable.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;

pub use error::{Error, Result};
