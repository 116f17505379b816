//! Files, configs and the command line around `csf-core`.
//!
//! A training run owns one directory:
//!
//! ```text
//! config.resolved       exact config used (TOML)
//! metrics.csv           one row per iteration
//! checkpoints/final.skf full training state (SKF1)
//! trajectories.jsonl    last 10⁴ transitions
//! eval.json             written by `csf eval`
//! diagnostics.json      written by `csf diagnose`
//! histograms/*.csv      raw samples behind the diagnostics
//! ```

pub mod ablate;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod diagnose;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod selftest;
pub mod train;

pub use error::{CliError, CliResult};
