//! Experiment driver: config handling, run directories and the command
//! implementations behind the `netcausal` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod artifacts;
pub mod config;
pub mod error;
pub mod policy;
pub mod regret;
pub mod report;
pub mod train;

use std::path::Path;

use netcausal::synthgen::{generate, Dataset};

pub use artifacts::Manifest;
pub use config::ExperimentConfig;
pub use error::{CliError, Result};

/// Generates a dataset into `out` and records it in the manifest.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    cfg.validate()?;
    let data = generate(&cfg.gen_config())?;
    data.save_dir(out)?;
    let mut manifest = Manifest::new("generate", cfg);
    let mut files: Vec<String> = std::fs::read_dir(out)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|f| f != artifacts::MANIFEST_FILE)
        .collect();
    files.sort();
    manifest.files = files;
    manifest.write(out)?;
    Ok(data)
}
