//! Experiment configuration: one JSON document carrying every knob. A
//! config file may set any subset of fields; the rest keep the defaults
//! shown by `--print-config`. Global flags override the file.

use crate::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use std::path::Path;
use wisp_core::cpc::CpcConfig;
use wisp_core::csi::FilterConfig;
use wisp_core::ecg::QrsConfig;
use wisp_core::synth::{Environment, Posture};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: String,
    /// Architecture trained by default: h3rn, w2sn, or cpcnet.
    pub model: String,
    /// Rates visited by `sweep-rate`, Hz.
    pub sampling_rates_hz: Vec<f64>,
    /// Window lengths visited by `sweep-duration`, seconds.
    pub durations_s: Vec<f64>,
    /// CSI conditioning chain (outlier removal and vitals low-pass).
    pub filter: FilterConfig,
    pub qrs: QrsConfig,
    pub cpc: CpcConfig,
    pub synth: SynthSettings,
    pub train: TrainSettings,
    pub sweep: SweepSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: "out".into(),
            model: "h3rn".into(),
            sampling_rates_hz: vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
            durations_s: vec![10.0, 40.0, 50.0, 70.0],
            filter: FilterConfig::default(),
            qrs: QrsConfig::default(),
            cpc: CpcConfig::default(),
            synth: SynthSettings::default(),
            train: TrainSettings::default(),
            sweep: SweepSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        let positive_list = |name: &str, values: &[f64]| {
            if values.is_empty() {
                return Err(CliError::Input(format!("{name} must list at least one value")));
            }
            if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(CliError::Input(format!("{name} entries must be positive")));
            }
            Ok(())
        };
        positive_list("sampling_rates_hz", &self.sampling_rates_hz)?;
        positive_list("durations_s", &self.durations_s)?;
        self.synth.validate()?;
        self.train.validate()?;
        self.sweep.validate()?;
        Ok(())
    }
}

/// Scenario generation knobs shared by `synth` and the corpus builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub environment: Environment,
    /// Line-of-sight reference SNR; NLOS scenarios sit a fixed penalty below.
    pub snr_db: f64,
    pub num_subcarriers: usize,
    pub num_antennas: usize,
    /// Short-recording length, seconds.
    pub duration_s: f64,
    /// CSI rate for short recordings, Hz.
    pub csi_rate_hz: f64,
    /// CSI rate for generated nights, Hz.
    pub night_csi_rate_hz: f64,
    /// Night length used when `synth --hours` gives no value of its own.
    pub hours: f64,
    /// Sleep-staging epoch length, seconds.
    pub epoch_s: f64,
    pub ecg_rate_hz: f64,
    pub ecg_snr_db: f64,
    pub resp_bpm: f64,
    pub heart_bpm: f64,
    /// Fractional beat-interval modulation over the breathing cycle.
    pub rsa_depth: f64,
    /// Body-movement events per minute.
    pub movement_per_min: f64,
    pub posture: Posture,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            environment: Environment::Los,
            snr_db: 25.0,
            num_subcarriers: 56,
            num_antennas: 2,
            duration_s: 60.0,
            csi_rate_hz: 20.0,
            night_csi_rate_hz: 10.0,
            hours: 1.0,
            epoch_s: 30.0,
            ecg_rate_hz: 250.0,
            ecg_snr_db: 25.0,
            resp_bpm: 15.0,
            heart_bpm: 72.0,
            rsa_depth: 0.15,
            movement_per_min: 0.0,
            posture: Posture::Lying,
        }
    }
}

impl SynthSettings {
    fn validate(&self) -> CliResult<()> {
        // +inf SNR means noise-free and is allowed; only NaN and -inf are not.
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(CliError::Input(format!("unusable synth.snr_db {}", self.snr_db)));
        }
        for (name, value) in [
            ("synth.duration_s", self.duration_s),
            ("synth.csi_rate_hz", self.csi_rate_hz),
            ("synth.night_csi_rate_hz", self.night_csi_rate_hz),
            ("synth.hours", self.hours),
            ("synth.epoch_s", self.epoch_s),
            ("synth.ecg_rate_hz", self.ecg_rate_hz),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(CliError::Input(format!("{name} must be positive, got {value}")));
            }
        }
        if self.num_subcarriers == 0 || self.num_antennas < 2 {
            return Err(CliError::Input(
                "synth needs at least 1 subcarrier and 2 antennas".into(),
            ));
        }
        Ok(())
    }
}

/// Training protocol for `train`, `eval`, and the model halves of sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Scenario fraction held out for validation.
    pub val_fraction: f64,
    /// Epochs without validation improvement before training stops early.
    pub early_stop_patience: Option<usize>,
    /// Vitals window length, seconds.
    pub window_s: f64,
    /// Rate the feature matrix is resampled to, Hz.
    pub feature_rate_hz: f64,
    /// Per-block convolution widths, sized for a single-core time budget.
    pub h3rn_filters: Vec<usize>,
    pub w2sn_filters: Vec<usize>,
    pub cpcnet_filters: Vec<usize>,
    /// Coupling-map columns per classifier input patch.
    pub patch_epochs: usize,
    /// Weight the stage loss by inverse class frequency.
    pub class_weighting: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 35,
            batch_size: 32,
            learning_rate: 2e-3,
            val_fraction: 0.2,
            early_stop_patience: None,
            window_s: 50.0,
            feature_rate_hz: 10.0,
            h3rn_filters: vec![4, 8, 16],
            w2sn_filters: vec![4, 8, 16, 24],
            cpcnet_filters: vec![4, 8, 16, 16],
            patch_epochs: 16,
            class_weighting: true,
        }
    }
}

impl TrainSettings {
    fn validate(&self) -> CliResult<()> {
        if self.epochs == 0 {
            return Err(CliError::Input("train.epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(CliError::Input("train.batch_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(CliError::Input(format!(
                "train.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(CliError::Input(format!(
                "train.val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if !(self.window_s > 0.0) || !(self.feature_rate_hz > 0.0) {
            return Err(CliError::Input(
                "train.window_s and train.feature_rate_hz must be positive".into(),
            ));
        }
        if self.patch_epochs == 0 {
            return Err(CliError::Input("train.patch_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Corpus and schedule used by the two sweep commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    /// Windows per sweep corpus; each window is its own scenario.
    pub num_windows: usize,
    /// Rate the channel is simulated at before decimation, Hz.
    pub native_rate_hz: f64,
    pub snr_db: f64,
    /// Training epochs per sweep point.
    pub epochs: usize,
    /// Window length held fixed by `sweep-rate`, seconds.
    pub fixed_duration_s: f64,
    /// Feature rate held fixed by `sweep-duration`, Hz.
    pub fixed_rate_hz: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            num_windows: 120,
            native_rate_hz: 50.0,
            snr_db: 15.0,
            epochs: 12,
            fixed_duration_s: 50.0,
            fixed_rate_hz: 10.0,
        }
    }
}

impl SweepSettings {
    fn validate(&self) -> CliResult<()> {
        if self.num_windows < 10 {
            return Err(CliError::Input(
                "sweep.num_windows must be at least 10 to leave a validation split".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(CliError::Input("sweep.epochs must be at least 1".into()));
        }
        for (name, value) in [
            ("sweep.native_rate_hz", self.native_rate_hz),
            ("sweep.fixed_duration_s", self.fixed_duration_s),
            ("sweep.fixed_rate_hz", self.fixed_rate_hz),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(CliError::Input(format!("{name} must be positive, got {value}")));
            }
        }
        Ok(())
    }
}

/// Defaults, overlaid by the config file, overlaid by the global flags.
pub fn load(path: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> CliResult<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Input(format!("cannot read config {}: {e}", p.display()))
            })?;
            serde_json::from_str(&text).map_err(|e| {
                CliError::Input(format!("config {} line {}: {e}", p.display(), e.line()))
            })?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.out_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn render(cfg: &ExperimentConfig) -> CliResult<String> {
    serde_json::to_string_pretty(cfg)
        .map_err(|e| CliError::Input(format!("config serialization failed: {e}")))
}
