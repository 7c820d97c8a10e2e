//! Workbench around `cgt-core`: ingestion, artifacts, the project store,
//! the HTTP API and the command line.

pub mod artifacts;
pub mod cli;
mod error;
pub mod fetch;
pub mod fixtures;
pub mod ingest;
pub mod parallel;
pub mod params;
pub mod server;
pub mod store;

pub use error::{Error, NetworkError, Result};
