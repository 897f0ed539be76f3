//! `cpc`: build a cardiopulmonary coupling map from an ECG recording.

use super::prepare_out_dir;
use crate::config::ExperimentConfig;
use crate::data::base_name;
use crate::svg::HeatMap;
use crate::{CliError, CliResult, EcgInput};
use wisp_core::cpc::cpc_signal;
use wisp_core::ecg::{align, detect_qrs, edr_uniform, heart_rate, hrv, EcgTrace};

pub fn run(args: &EcgInput, cfg: &ExperimentConfig) -> CliResult<()> {
    let dir = prepare_out_dir(cfg)?;
    let trace = EcgTrace::load(&args.input)?;
    let annotation = detect_qrs(&trace, &cfg.qrs)?;
    let mean_hr = heart_rate(&annotation, trace.sample_rate)?.mean();

    let heart = hrv(&annotation, trace.sample_rate)?;
    let breath = edr_uniform(&trace, &annotation, &cfg.qrs)?;
    let (heart, breath) = align(&heart, &breath)?;
    let map = cpc_signal(&heart, &breath, &cfg.cpc)?;

    let base = base_name(&args.input);
    let csv_path = dir.join(format!("{base}.cpc.csv"));
    map.save(&csv_path)?;

    // Rows become frequencies so the map reads time left to right.
    let mut cells = vec![vec![0.0; map.num_epochs()]; map.num_freqs()];
    for (e, row) in map.values.iter().enumerate() {
        for (f, value) in row.iter().enumerate() {
            cells[f][e] = *value;
        }
    }
    let figure = HeatMap {
        title: format!("Cardiopulmonary coupling, {base}"),
        x_label: "time (s)".into(),
        y_label: "frequency (Hz)".into(),
        x: map.epochs_s.clone(),
        y: map.freqs_hz.clone(),
        values: cells,
    };
    let svg_path = dir.join(format!("{base}.cpc.svg"));
    std::fs::write(&svg_path, figure.render())
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", svg_path.display())))?;

    let peak = peak_frequency(&map);
    match mean_hr {
        Some(bpm) => println!(
            "beats={} mean_hr_bpm={bpm:.3} peak_coherence_hz={peak:.4}",
            annotation.len()
        ),
        None => println!(
            "beats={} mean_hr_bpm=n/a peak_coherence_hz={peak:.4}",
            annotation.len()
        ),
    }
    println!("{}", csv_path.display());
    Ok(())
}

/// Frequency bin whose coherence, averaged over all map epochs, is largest.
/// The DC bin is excluded; detrending leaves it as a ratio of residuals.
fn peak_frequency(map: &wisp_core::cpc::CpcMap) -> f64 {
    let mut best = (0, f64::NEG_INFINITY);
    for f in 1..map.num_freqs() {
        let mean: f64 =
            map.values.iter().map(|row| row[f]).sum::<f64>() / map.num_epochs().max(1) as f64;
        if mean > best.1 {
            best = (f, mean);
        }
    }
    map.freqs_hz.get(best.0).copied().unwrap_or(f64::NAN)
}
