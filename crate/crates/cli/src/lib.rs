//! Batch front end: configuration, experiments and file outputs.

pub mod commands;
pub mod config;
