//! Batch front end: JSON-configured commands that write CSV/JSON outputs and
//! a run manifest.

pub mod commands;
pub mod config;
pub mod manifest;
