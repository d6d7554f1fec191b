//! Configuration, orchestration and output for the `hcsim` command.

pub mod app;
pub mod checks;
pub mod commands;
pub mod config;
