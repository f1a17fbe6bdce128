//! Experiment runner for single-location regression.
//!
//! Each subcommand reads a TOML [`config::ExperimentConfig`], fans its grid
//! points out over a rayon pool and writes CSV tables plus SVG charts to the
//! output directory. Outputs depend only on the config and the seed.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod output;
pub mod svg;

use std::path::PathBuf;

pub use commands::Command;
pub use config::ExperimentConfig;
pub use error::{CliError, Result};

/// Everything a command needs besides its own config keys.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Context {
    /// `--out` wins over `output_dir`, `--seed` over `seed`.
    pub fn new(mut cfg: ExperimentConfig, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        let out = out.or_else(|| cfg.output_dir.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
        let seed = seed.or(cfg.seed).unwrap_or(0);
        cfg.seed = Some(seed);
        cfg.output_dir = Some(out.display().to_string());
        Self { cfg, out, seed }
    }

    pub fn config_line(&self) -> String {
        self.cfg.one_line()
    }
}

/// Files written by a command and the number of grid points that did not converge.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub unconverged: usize,
}

impl Report {
    pub fn exit_code(&self) -> u8 {
        if self.unconverged > 0 { 3 } else { 0 }
    }
}
