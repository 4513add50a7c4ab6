//! Command-line driver for the geo-localization engine: world/trajectory
//! simulation, filter runs, evaluation, and the latency benchmark.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;

pub use config::RunConfig;
pub use error::CmdError;
