//! `qrs`: detect beats in an ECG recording and write the annotation.

use super::prepare_out_dir;
use crate::config::ExperimentConfig;
use crate::data::base_name;
use crate::{CliResult, EcgInput};
use wisp_core::ecg::{detect_qrs, heart_rate, EcgTrace, QrsAnnotation};

pub fn run(args: &EcgInput, cfg: &ExperimentConfig) -> CliResult<()> {
    let dir = prepare_out_dir(cfg)?;
    let trace = EcgTrace::load(&args.input)?;
    let annotation = if trace.samples.is_empty() {
        QrsAnnotation::default()
    } else {
        detect_qrs(&trace, &cfg.qrs)?
    };

    let out = dir.join(format!("{}.qrs.csv", base_name(&args.input)));
    annotation.save(&out)?;

    let mean_hr = heart_rate(&annotation, trace.sample_rate)?.mean();
    match mean_hr {
        Some(bpm) => println!("beats={} mean_hr_bpm={bpm:.3}", annotation.len()),
        None => println!("beats={} mean_hr_bpm=n/a", annotation.len()),
    }
    println!("{}", out.display());
    Ok(())
}
