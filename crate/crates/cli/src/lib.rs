//! Command-line harness internals: configuration, task drivers, decoding,
//! benchmarks, the gradient-check sweep, and plot-data export.

pub mod bench;
pub mod config;
pub mod export;
pub mod generate;
pub mod models;
pub mod sweep;
pub mod tasks;
pub mod tokenizer;
pub mod ua;
