//! File formats, run configuration and command implementations behind the
//! `wavframe` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod format;
pub mod fsutil;

pub use error::{Error, Result};
