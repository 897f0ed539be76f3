//! One module per subcommand.

pub mod cpc;
pub mod eval;
pub mod preprocess;
pub mod qrs;
pub mod sweep;
pub mod synth;
pub mod train;

use crate::config::ExperimentConfig;
use crate::{CliError, CliResult};
use std::path::PathBuf;

/// Creates the configured output directory, failing with an input error
/// when the path cannot be used.
pub fn prepare_out_dir(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir).map_err(|e| {
        CliError::Input(format!("cannot create output directory {}: {e}", dir.display()))
    })?;
    Ok(dir)
}
