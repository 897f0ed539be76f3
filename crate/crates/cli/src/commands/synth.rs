//! `synth`: write one synthetic scenario (CSI, ECG, labels for nights, and
//! a manifest tying them together) into the output directory.

use super::prepare_out_dir;
use crate::config::ExperimentConfig;
use crate::CliResult;
use clap::Args;
use wisp_core::synth::{
    generate_sleep_night, generate_vitals_scenario, snr_to_manifest, write_labels_csv,
    Environment, NightConfig, ScenarioManifest, SubjectProfile, TruthRates, VitalsScenarioConfig,
};

#[derive(Args)]
pub struct SynthArgs {
    /// Generate a full night of this length instead of a short recording.
    #[arg(long)]
    pub hours: Option<f64>,
    /// Short-recording length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Breaths per minute for the short form.
    #[arg(long)]
    pub resp_bpm: Option<f64>,
    /// Beats per minute for the short form.
    #[arg(long)]
    pub heart_bpm: Option<f64>,
    /// Respiratory sinus arrhythmia depth, fraction of the beat interval.
    #[arg(long)]
    pub rsa: Option<f64>,
    /// Body-movement events per minute.
    #[arg(long)]
    pub movement: Option<f64>,
    /// Line-of-sight reference SNR in dB.
    #[arg(long)]
    pub snr_db: Option<f64>,
    /// Propagation environment: los or nlos.
    #[arg(long)]
    pub environment: Option<String>,
    /// CSI sample rate in Hz.
    #[arg(long)]
    pub csi_rate: Option<f64>,
    /// Output basename; defaults to the kind plus the seed.
    #[arg(long)]
    pub name: Option<String>,
}

fn parse_environment(text: &str) -> CliResult<Environment> {
    match text {
        "los" => Ok(Environment::Los),
        "nlos" => Ok(Environment::Nlos),
        other => Err(crate::CliError::Input(format!(
            "unknown environment {other:?}, expected los or nlos"
        ))),
    }
}

pub fn run(args: &SynthArgs, cfg: &ExperimentConfig) -> CliResult<()> {
    let dir = prepare_out_dir(cfg)?;
    let environment = match &args.environment {
        Some(text) => parse_environment(text)?,
        None => cfg.synth.environment,
    };
    let snr_db = args.snr_db.unwrap_or(cfg.synth.snr_db);
    let seed = cfg.seed;

    let manifest_path = if let Some(hours) = args.hours {
        let night_cfg = NightConfig {
            hours,
            epoch_s: cfg.synth.epoch_s,
            csi_rate: args.csi_rate.unwrap_or(cfg.synth.night_csi_rate_hz),
            ecg_rate: cfg.synth.ecg_rate_hz,
            snr_db,
            ecg_snr_db: cfg.synth.ecg_snr_db,
            environment,
            num_subcarriers: cfg.synth.num_subcarriers,
            num_antennas: cfg.synth.num_antennas,
        };
        let night = generate_sleep_night(&night_cfg, seed, None)?;
        let name = args.name.clone().unwrap_or_else(|| format!("night-{seed}"));
        night.csi.save(&dir.join(format!("{name}.csi.jsonl")))?;
        night.ecg.save(&dir.join(format!("{name}.ecg.csv")))?;
        write_labels_csv(&dir.join(format!("{name}.labels.csv")), &night.labels)?;
        let manifest = ScenarioManifest {
            kind: "night".into(),
            seed,
            environment,
            csi_file: format!("{name}.csi.jsonl"),
            csi_rate: night_cfg.csi_rate,
            duration_s: hours * 3600.0,
            snr_db: snr_to_manifest(snr_db),
            ecg_file: Some(format!("{name}.ecg.csv")),
            ecg_rate: Some(night_cfg.ecg_rate),
            labels_file: Some(format!("{name}.labels.csv")),
            epoch_s: Some(night_cfg.epoch_s),
            truth: None,
        };
        let path = dir.join(format!("{name}.json"));
        manifest.save(&path)?;
        path
    } else {
        let scenario_cfg = VitalsScenarioConfig {
            profile: SubjectProfile {
                respiration_bpm: args.resp_bpm.unwrap_or(cfg.synth.resp_bpm),
                heart_bpm: args.heart_bpm.unwrap_or(cfg.synth.heart_bpm),
                rsa_depth: args.rsa.unwrap_or(cfg.synth.rsa_depth),
                movement_per_min: args.movement.unwrap_or(cfg.synth.movement_per_min),
                posture: cfg.synth.posture,
            },
            environment,
            snr_db,
            num_subcarriers: cfg.synth.num_subcarriers,
            num_antennas: cfg.synth.num_antennas,
            duration_s: args.duration.unwrap_or(cfg.synth.duration_s),
            csi_rate: args.csi_rate.unwrap_or(cfg.synth.csi_rate_hz),
            ecg_rate: cfg.synth.ecg_rate_hz,
            ecg_snr_db: cfg.synth.ecg_snr_db,
        };
        let scenario = generate_vitals_scenario(&scenario_cfg, seed)?;
        let name = args.name.clone().unwrap_or_else(|| format!("vitals-{seed}"));
        scenario.csi.save(&dir.join(format!("{name}.csi.jsonl")))?;
        scenario.ecg.save(&dir.join(format!("{name}.ecg.csv")))?;
        let manifest = ScenarioManifest {
            kind: "vitals".into(),
            seed,
            environment,
            csi_file: format!("{name}.csi.jsonl"),
            csi_rate: scenario_cfg.csi_rate,
            duration_s: scenario_cfg.duration_s,
            snr_db: snr_to_manifest(snr_db),
            ecg_file: Some(format!("{name}.ecg.csv")),
            ecg_rate: Some(scenario_cfg.ecg_rate),
            labels_file: None,
            epoch_s: None,
            truth: Some(TruthRates {
                resp_hz: scenario.truth.resp_hz,
                heart_hz: scenario.truth.heart_hz,
                mean_resp_bpm: scenario.truth.mean_resp_bpm,
                mean_heart_bpm: scenario.truth.mean_heart_bpm,
            }),
        };
        let path = dir.join(format!("{name}.json"));
        manifest.save(&path)?;
        path
    };
    println!("{}", manifest_path.display());
    Ok(())
}
