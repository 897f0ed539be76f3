//! Dataset assembly: turns the generators into training-ready windows for
//! the vitals and staging networks.
//!
//! Each vitals window comes from its own independently sampled subject and
//! channel, so a window-level split is also a scenario-level split and no
//! window shares signal content with another. Night corpora keep nights
//! whole so callers can hold entire nights out.

use crate::cpc::{cpc_signal, CpcConfig, CpcMap};
use crate::csi::{
    build_feature_matrix, condition_recording, features_from_conditioned, ConditionedRecording,
    CsiRecording, FilterConfig,
};
use crate::ecg::{align, detect_qrs, edr_uniform, hrv, EcgTrace, QrsConfig};
use crate::error::{CoreError, Result};
use crate::models::{SleepStage, StageDataset, VitalsDataset};
use crate::synth::{
    generate_sleep_night, synthesize_csi, ChannelScenario, Environment, NightConfig, NightRecord,
    Posture, SubjectProfile, VitalsTracks, HEART_RANGE_BPM, RESPIRATION_RANGE_BPM, RSA_RANGE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wisp_nn::Tensor;

/// Scenario sampling ranges and sizes for a constant-profile vitals corpus.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VitalsCorpusConfig {
    pub num_windows: usize,
    pub window_s: f64,
    /// Rate the channel is simulated and filtered at.
    pub native_rate_hz: f64,
    /// Rate of the feature matrix rows.
    pub feature_rate_hz: f64,
    pub num_subcarriers: usize,
    pub environment: Environment,
    pub snr_db: f64,
    pub heart_bpm_range: (f64, f64),
    pub resp_bpm_range: (f64, f64),
    pub rsa_range: (f64, f64),
    pub movement_per_min: f64,
    pub filter: FilterConfig,
    pub seed: u64,
}

impl Default for VitalsCorpusConfig {
    fn default() -> Self {
        VitalsCorpusConfig {
            num_windows: 200,
            window_s: 50.0,
            native_rate_hz: 20.0,
            feature_rate_hz: 10.0,
            num_subcarriers: 56,
            environment: Environment::Los,
            snr_db: 30.0,
            heart_bpm_range: (55.0, 85.0),
            resp_bpm_range: (12.0, 20.0),
            rsa_range: (0.0, 0.15),
            movement_per_min: 0.0,
            filter: FilterConfig {
                low_pass_cutoff: 0.35,
                ..FilterConfig::default()
            },
            seed: 0,
        }
    }
}

fn check_range(range: (f64, f64), bounds: (f64, f64), what: &str) -> Result<()> {
    if !(range.0 <= range.1) || range.0 < bounds.0 || range.1 > bounds.1 {
        return Err(CoreError::Range(format!(
            "{what} sampling range {}-{} must sit inside {}-{}",
            range.0, range.1, bounds.0, bounds.1
        )));
    }
    Ok(())
}

impl VitalsCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_windows == 0 {
            return Err(CoreError::Config("corpus needs at least one window".into()));
        }
        check_range(self.heart_bpm_range, HEART_RANGE_BPM, "heart rate")?;
        check_range(self.resp_bpm_range, RESPIRATION_RANGE_BPM, "respiration rate")?;
        check_range(self.rsa_range, RSA_RANGE, "RSA depth")?;
        if !(self.native_rate_hz > 0.0) || !(self.feature_rate_hz > 0.0) {
            return Err(CoreError::Config("rates must be positive".into()));
        }
        if self.feature_rate_hz > self.native_rate_hz + 1e-9 {
            return Err(CoreError::Config(format!(
                "feature rate {} Hz exceeds the native rate {} Hz",
                self.feature_rate_hz, self.native_rate_hz
            )));
        }
        Ok(())
    }
}

fn draw(range: (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Z-scores each subcarrier-and-channel series over the time axis, in place.
///
/// Channel gains vary by an order of magnitude between scenarios, which buries
/// the vitals ripple; removing per-series mean and scale makes windows from
/// different channels comparable, so a model trained on one set of scenarios
/// transfers to another. Constant series become all zeros. The transform is
/// stateless, so applying it at evaluation time leaks nothing from training.
pub fn standardize_feature_columns(data: &mut Tensor) -> Result<()> {
    let shape = data.shape().to_vec();
    if shape.len() != 3 {
        return Err(CoreError::Config(format!(
            "expected a [rows, subcarriers, channels] tensor, got shape {shape:?}"
        )));
    }
    let (rows, cols, channels) = (shape[0], shape[1], shape[2]);
    if rows < 2 {
        return Err(CoreError::Config(format!(
            "cannot standardize over a time axis of {rows} rows"
        )));
    }
    let values = data.data_mut();
    let stride = cols * channels;
    for k in 0..cols {
        for c in 0..channels {
            let offset = k * channels + c;
            let mut mean = 0.0;
            for i in 0..rows {
                mean += values[i * stride + offset];
            }
            mean /= rows as f64;
            let mut var = 0.0;
            for i in 0..rows {
                var += (values[i * stride + offset] - mean).powi(2);
            }
            var /= rows as f64;
            let std = var.sqrt();
            for i in 0..rows {
                let v = &mut values[i * stride + offset];
                *v = if std < 1e-12 { 0.0 } else { (*v - mean) / std };
            }
        }
    }
    Ok(())
}

/// Simulates `num_windows` independent scenarios, handing each one's
/// conditioned recording and truth tracks to `consume`. Memory stays flat:
/// nothing is retained between windows.
pub fn for_each_conditioned_window(
    cfg: &VitalsCorpusConfig,
    mut consume: impl FnMut(usize, &ConditionedRecording, &VitalsTracks) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = (cfg.window_s * cfg.native_rate_hz).round() as usize;
    for i in 0..cfg.num_windows {
        let profile = SubjectProfile {
            respiration_bpm: draw(cfg.resp_bpm_range, &mut rng),
            heart_bpm: draw(cfg.heart_bpm_range, &mut rng),
            rsa_depth: draw(cfg.rsa_range, &mut rng),
            movement_per_min: cfg.movement_per_min,
            posture: Posture::Lying,
        };
        let scenario = ChannelScenario::sample(
            cfg.environment,
            cfg.snr_db,
            cfg.num_subcarriers,
            2,
            &mut rng,
        )?;
        let window_seed: u64 = rng.gen();
        let tracks = VitalsTracks::from_profile(&profile, samples, cfg.native_rate_hz)?;
        let (recording, _) = synthesize_csi(&tracks, &scenario, window_seed)?;
        let conditioned = condition_recording(&recording, &cfg.filter.hampel)?;
        consume(i, &conditioned, &tracks)?;
    }
    Ok(())
}

/// Builds a ready-to-train vitals dataset at the configured feature rate,
/// labeled with the realized mean rates of each window. Windows are
/// standardized per subcarrier series so the model sees comparable scales
/// across scenarios.
pub fn build_vitals_corpus(cfg: &VitalsCorpusConfig) -> Result<VitalsDataset> {
    let rows = (cfg.window_s * cfg.feature_rate_hz).round() as usize;
    let mut dataset = VitalsDataset::new([rows, cfg.num_subcarriers, 2])?;
    for_each_conditioned_window(cfg, |_, conditioned, tracks| {
        let mut q = features_from_conditioned(conditioned, cfg.window_s, cfg.feature_rate_hz, &cfg.filter)?;
        standardize_feature_columns(&mut q.data)?;
        let span = 0..tracks.len();
        dataset.push(&q.data, tracks.mean_heart_bpm(span.clone()), tracks.mean_resp_bpm(span))
    })?;
    Ok(dataset)
}

/// Truth labels for a window truncated to its first `t_seconds`.
pub fn truncated_truth(tracks: &VitalsTracks, t_seconds: f64) -> (f64, f64) {
    let n = ((t_seconds * tracks.rate).round() as usize).min(tracks.len());
    (tracks.mean_heart_bpm(0..n), tracks.mean_resp_bpm(0..n))
}

// ── night corpora ───────────────────────────────────────────────────────────

/// Sizing for a staging corpus of independent nights.
#[derive(Debug, Clone, PartialEq)]
pub struct NightCorpusConfig {
    pub num_nights: usize,
    pub night: NightConfig,
    pub feature_rate_hz: f64,
    pub filter: FilterConfig,
    pub seed: u64,
}

impl Default for NightCorpusConfig {
    fn default() -> Self {
        NightCorpusConfig {
            num_nights: 5,
            night: NightConfig::default(),
            feature_rate_hz: 10.0,
            filter: FilterConfig {
                low_pass_cutoff: 0.35,
                ..FilterConfig::default()
            },
            seed: 0,
        }
    }
}

impl NightCorpusConfig {
    fn rows_per_epoch(&self) -> Result<usize> {
        let rows = self.night.epoch_s * self.feature_rate_hz;
        if (rows - rows.round()).abs() > 1e-9 || rows.round() < 1.0 {
            return Err(CoreError::Config(format!(
                "epoch length {} s is not a whole number of rows at {} Hz",
                self.night.epoch_s, self.feature_rate_hz
            )));
        }
        Ok(rows.round() as usize)
    }

    pub fn night_seed(&self, index: usize) -> u64 {
        // Spread night seeds apart so their generator streams never overlap.
        self.seed.wrapping_add(1 + index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Simulates the configured nights one at a time, handing each to `consume`.
pub fn for_each_night(
    cfg: &NightCorpusConfig,
    mut consume: impl FnMut(usize, NightRecord) -> Result<()>,
) -> Result<()> {
    if cfg.num_nights == 0 {
        return Err(CoreError::Config("corpus needs at least one night".into()));
    }
    cfg.rows_per_epoch()?;
    for i in 0..cfg.num_nights {
        let night = generate_sleep_night(&cfg.night, cfg.night_seed(i), None)?;
        consume(i, night)?;
    }
    Ok(())
}

/// Cuts one night's feature matrix into per-epoch labeled windows.
///
/// Standardization runs over the whole night before cutting, so epochs keep
/// their relative breathing amplitudes (deep sleep breathes bigger than REM)
/// while the night's channel gains drop out.
pub fn stage_windows_from_night(
    night: &NightRecord,
    feature_rate_hz: f64,
    filter: &FilterConfig,
) -> Result<StageDataset> {
    stage_windows(&night.csi, &night.labels, feature_rate_hz, filter)
}

/// Same cut for a recording and label list loaded from disk.
pub fn stage_windows(
    csi: &CsiRecording,
    labels: &[SleepStage],
    feature_rate_hz: f64,
    filter: &FilterConfig,
) -> Result<StageDataset> {
    if labels.is_empty() {
        return Err(CoreError::Config("no epoch labels".into()));
    }
    let mut q = build_feature_matrix(csi, csi.duration_s(), feature_rate_hz, filter)?;
    standardize_feature_columns(&mut q.data)?;
    let m = csi.num_subcarriers();
    let rows_per_epoch = q.rows() / labels.len();
    if rows_per_epoch * labels.len() != q.rows() || rows_per_epoch == 0 {
        return Err(CoreError::Config(format!(
            "{} feature rows do not divide into {} epochs",
            q.rows(),
            labels.len()
        )));
    }
    let mut dataset = StageDataset::new([rows_per_epoch, m, 2])?;
    let stride = rows_per_epoch * m * 2;
    for (e, stage) in labels.iter().enumerate() {
        let window = Tensor::from_vec(
            &[rows_per_epoch, m, 2],
            q.data.data()[e * stride..(e + 1) * stride].to_vec(),
        )?;
        dataset.push(&window, *stage)?;
    }
    Ok(dataset)
}

/// One night's coupling analysis: ECG to beat series to coherence map.
pub fn coupling_map_from_night(
    night: &NightRecord,
    qrs_cfg: &QrsConfig,
    cpc_cfg: &CpcConfig,
) -> Result<CpcMap> {
    coupling_map_from_ecg(&night.ecg, qrs_cfg, cpc_cfg)
}

/// Coupling map for a standalone trace: detection, beat-interval and
/// respiration surrogates, alignment, coherence.
pub fn coupling_map_from_ecg(
    ecg: &EcgTrace,
    qrs_cfg: &QrsConfig,
    cpc_cfg: &CpcConfig,
) -> Result<CpcMap> {
    let annotation = detect_qrs(ecg, qrs_cfg)?;
    let heart = hrv(&annotation, ecg.sample_rate)?;
    let breath = edr_uniform(ecg, &annotation, qrs_cfg)?;
    let (heart, breath) = align(&heart, &breath)?;
    cpc_signal(&heart, &breath, cpc_cfg)
}

/// Cuts a night's coupling map into labeled patches.
///
/// Each patch stacks `patch_epochs` consecutive map columns (time) by all
/// frequency bins, labeled with the sleep stage at the patch center. Epochs
/// whose patch would run past either end of the map are skipped.
pub fn cpc_windows_from_night(
    night: &NightRecord,
    map: &CpcMap,
    epoch_s: f64,
    patch_epochs: usize,
) -> Result<StageDataset> {
    cpc_windows(map, &night.labels, epoch_s, patch_epochs)
}

/// Same cut for a map and label list loaded from disk.
pub fn cpc_windows(
    map: &CpcMap,
    labels: &[SleepStage],
    epoch_s: f64,
    patch_epochs: usize,
) -> Result<StageDataset> {
    if patch_epochs == 0 || map.num_epochs() < patch_epochs {
        return Err(CoreError::Config(format!(
            "map with {} columns cannot supply {patch_epochs}-column patches",
            map.num_epochs()
        )));
    }
    let n_freqs = map.num_freqs();
    let mut dataset = StageDataset::new([patch_epochs, n_freqs, 1])?;
    for (e, stage) in labels.iter().enumerate() {
        let center_s = (e as f64 + 0.5) * epoch_s;
        let patch_start_s = center_s - 0.5 * patch_epochs as f64 * epoch_s;
        // Map columns advance one epoch per step; find the column whose
        // window starts nearest the patch start.
        let start = map
            .epochs_s
            .iter()
            .position(|t| *t >= patch_start_s - 1e-9)
            .unwrap_or(map.num_epochs());
        if start + patch_epochs > map.num_epochs() {
            continue;
        }
        if map.epochs_s[start] > patch_start_s + epoch_s + 1e-9 {
            // The patch would start before the map does.
            continue;
        }
        let mut values = Vec::with_capacity(patch_epochs * n_freqs);
        for row in &map.values[start..start + patch_epochs] {
            values.extend_from_slice(row);
        }
        let window = Tensor::from_vec(&[patch_epochs, n_freqs, 1], values)?;
        dataset.push(&window, *stage)?;
    }
    if dataset.is_empty() {
        return Err(CoreError::InsufficientData {
            required_s: patch_epochs as f64 * epoch_s,
            available_s: map.epochs_s.last().copied().unwrap_or(0.0),
        });
    }
    Ok(dataset)
}
