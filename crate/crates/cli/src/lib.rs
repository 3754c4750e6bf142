//! Command-line runner: config, run manifests and the pipeline stages.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;
