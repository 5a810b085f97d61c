//! Library side of the `caltrend` command: configuration, the analysis
//! pipeline, simulation campaigns and the reporting decision grid.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;
