//! File formats, dataset and checkpoint IO, and the command-line front end.

pub mod checkpoint;
pub mod cli;
pub mod colormap;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics_log;
pub mod pfm;
pub mod ply;
pub mod png_io;

pub use error::{Error, Result};
