//! Command-line front end for the PU heterogeneous domain adaptation library.

pub mod commands;
pub mod config;

pub use commands::{ablate, aggregate, analyze, generate, parse_seeds, run, RunOptions};
pub use config::ExperimentConfig;
