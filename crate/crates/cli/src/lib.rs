//! Command-line front end: config files, dataset and checkpoint formats,
//! record outputs and the subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod files;
pub mod records;
