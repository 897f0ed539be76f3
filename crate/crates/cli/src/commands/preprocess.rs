//! `preprocess`: run the conditioning chain over a recording and write the
//! resulting feature matrix as CSV.

use super::prepare_out_dir;
use crate::config::ExperimentConfig;
use crate::data::base_name;
use crate::CliResult;
use clap::Args;
use std::path::PathBuf;
use wisp_core::csi::{build_feature_matrix, CsiRecording};
use wisp_core::synth::ScenarioManifest;

#[derive(Args)]
pub struct PreprocessArgs {
    /// Scenario manifest (.json) or raw CSI recording (.jsonl).
    #[arg(long)]
    pub input: PathBuf,
    /// Feature rate in Hz; defaults to the configured training rate.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Leading span to featurize, seconds; defaults to the whole recording.
    #[arg(long)]
    pub duration: Option<f64>,
}

pub fn run(args: &PreprocessArgs, cfg: &ExperimentConfig) -> CliResult<()> {
    let dir = prepare_out_dir(cfg)?;
    let csi_path = if args.input.extension().is_some_and(|e| e == "json") {
        let manifest = ScenarioManifest::load(&args.input)?;
        args.input
            .parent()
            .unwrap_or(std::path::Path::new("."))
            .join(&manifest.csi_file)
    } else {
        args.input.clone()
    };
    let recording = CsiRecording::load(&csi_path)?;
    let rate = args.rate.unwrap_or(cfg.train.feature_rate_hz);
    let duration = args.duration.unwrap_or_else(|| recording.duration_s());
    let matrix = build_feature_matrix(&recording, duration, rate, &cfg.filter)?;

    let out = dir.join(format!("{}.features.csv", base_name(&args.input)));
    matrix.save(&out)?;
    println!("{}", out.display());
    Ok(())
}
