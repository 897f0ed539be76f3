//! Whole-night simulation: a semi-Markov stage sequence, stage-conditioned
//! vitals tracks, and matched CSI, ECG, and label outputs.

use super::{
    generate_ecg_from_tracks, stream_rng, synthesize_csi, ChannelScenario, Environment,
    VitalsTracks, STREAM_PHYSIOLOGY, STREAM_SCENARIO, STREAM_STAGES,
};
use crate::csi::CsiRecording;
use crate::ecg::EcgTrace;
use crate::error::{CoreError, Result};
use crate::models::SleepStage;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const NIGHT_HOURS_RANGE: (f64, f64) = (1.0, 10.0);
/// Seconds over which vitals blend into a new stage episode.
const RAMP_S: f64 = 5.0;
/// Nightly resting heart rate range, bpm.
const BASE_HEART_RANGE_BPM: (f64, f64) = (60.0, 80.0);
/// Breathing-rate wobble in REM: fractional FM depth and its rate in Hz.
const REM_RESP_FM_DEPTH: f64 = 0.15;
const REM_RESP_FM_HZ: f64 = 0.05;
/// Long-run stage mix of the default sequencer, percent of epochs.
pub const TARGET_WAKE_PCT: f64 = 12.2;
pub const TARGET_REM_PCT: f64 = 4.7;
const MIX_TOLERANCE_PP: f64 = 2.5;
const MAX_SEQUENCE_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct NightConfig {
    pub hours: f64,
    pub epoch_s: f64,
    pub csi_rate: f64,
    pub ecg_rate: f64,
    pub snr_db: f64,
    pub ecg_snr_db: f64,
    pub environment: Environment,
    pub num_subcarriers: usize,
    pub num_antennas: usize,
}

impl Default for NightConfig {
    fn default() -> Self {
        NightConfig {
            hours: 8.0,
            epoch_s: 30.0,
            csi_rate: 10.0,
            ecg_rate: 250.0,
            snr_db: 25.0,
            ecg_snr_db: 25.0,
            environment: Environment::Los,
            num_subcarriers: 56,
            num_antennas: 2,
        }
    }
}

impl NightConfig {
    fn validate(&self) -> Result<(usize, usize)> {
        let (lo, hi) = NIGHT_HOURS_RANGE;
        if !self.hours.is_finite() || self.hours < lo || self.hours > hi {
            return Err(CoreError::Range(format!(
                "night length {} h outside the supported range {lo}-{hi} h",
                self.hours
            )));
        }
        if !(self.epoch_s > 0.0) || !(self.csi_rate > 0.0) || !(self.ecg_rate > 0.0) {
            return Err(CoreError::Config(
                "epoch length and sample rates must be positive".into(),
            ));
        }
        let epochs = self.hours * 3600.0 / self.epoch_s;
        if (epochs - epochs.round()).abs() > 1e-9 || epochs.round() < 1.0 {
            return Err(CoreError::Config(format!(
                "epoch length {} s does not divide the night evenly",
                self.epoch_s
            )));
        }
        let per_epoch = self.epoch_s * self.csi_rate;
        if (per_epoch - per_epoch.round()).abs() > 1e-9 || per_epoch.round() < 1.0 {
            return Err(CoreError::Config(format!(
                "epoch length {} s is not a whole number of CSI samples at {} Hz",
                self.epoch_s, self.csi_rate
            )));
        }
        Ok((epochs.round() as usize, per_epoch.round() as usize))
    }
}

/// Stage-conditioned generation parameters.
///
/// | stage | breaths/min | heart scale | breath depth | movement/min | RSA |
/// |-------|-------------|-------------|--------------|--------------|-----|
/// | WAKE  | 14-20       | 1.05        | 1.0          | 4.0          | 0.15 |
/// | REM   | 16-22, FM   | 1.08        | 0.8          | 0.05         | 0.05 |
/// | LIGHT | 12-16       | 1.00        | 1.1          | 0.5          | 0.15 |
/// | DEEP  | 10-13       | 0.85        | 1.3          | 0.1          | 0.25 |
///
/// Heart scale multiplies the nightly resting rate; breath depth multiplies
/// the breathing gain of the channel. REM adds a slow wobble to the
/// breathing rate on top of its range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagePhysiology {
    pub resp_bpm_range: (f64, f64),
    pub heart_scale: f64,
    pub breath_scale: f64,
    pub movement_per_min: f64,
    pub rsa_depth: f64,
}

impl StagePhysiology {
    pub fn for_stage(stage: SleepStage) -> Self {
        match stage {
            SleepStage::Wake => StagePhysiology {
                resp_bpm_range: (14.0, 20.0),
                heart_scale: 1.05,
                breath_scale: 1.0,
                movement_per_min: 4.0,
                rsa_depth: 0.15,
            },
            SleepStage::Rem => StagePhysiology {
                resp_bpm_range: (16.0, 22.0),
                heart_scale: 1.08,
                breath_scale: 0.8,
                movement_per_min: 0.05,
                rsa_depth: 0.05,
            },
            SleepStage::Light => StagePhysiology {
                resp_bpm_range: (12.0, 16.0),
                heart_scale: 1.0,
                breath_scale: 1.1,
                movement_per_min: 0.5,
                rsa_depth: 0.15,
            },
            SleepStage::Deep => StagePhysiology {
                resp_bpm_range: (10.0, 13.0),
                heart_scale: 0.85,
                breath_scale: 1.3,
                movement_per_min: 0.1,
                rsa_depth: 0.25,
            },
        }
    }
}

/// Mean episode length in epochs for each stage. Combined with the
/// transition weights below, the long-run epoch mix comes out at roughly
/// 12.2% WAKE, 4.7% REM, 55.4% LIGHT, and 27.7% DEEP.
fn mean_dwell_epochs(stage: SleepStage) -> f64 {
    match stage {
        SleepStage::Wake => 8.3,
        SleepStage::Rem => 5.4,
        SleepStage::Light => 16.0,
        SleepStage::Deep => 16.0,
    }
}

fn next_stage(stage: SleepStage, rng: &mut ChaCha8Rng) -> SleepStage {
    let u: f64 = rng.gen();
    match stage {
        SleepStage::Wake => SleepStage::Light,
        SleepStage::Light => {
            if u < 0.5 {
                SleepStage::Deep
            } else if u < 0.75 {
                SleepStage::Rem
            } else {
                SleepStage::Wake
            }
        }
        SleepStage::Deep => {
            if u < 0.8 {
                SleepStage::Light
            } else {
                SleepStage::Wake
            }
        }
        SleepStage::Rem => {
            if u < 0.7 {
                SleepStage::Light
            } else {
                SleepStage::Wake
            }
        }
    }
}

fn geometric_dwell(mean: f64, rng: &mut ChaCha8Rng) -> usize {
    let p = 1.0 / mean;
    let u: f64 = rng.gen();
    let dwell = ((1.0 - u).ln() / (1.0 - p).ln()).ceil();
    (dwell as usize).max(1)
}

fn sample_sequence(n_epochs: usize, rng: &mut ChaCha8Rng) -> Vec<SleepStage> {
    let mut labels = Vec::with_capacity(n_epochs);
    let mut stage = SleepStage::Wake;
    while labels.len() < n_epochs {
        let dwell = geometric_dwell(mean_dwell_epochs(stage), rng);
        for _ in 0..dwell.min(n_epochs - labels.len()) {
            labels.push(stage);
        }
        stage = next_stage(stage, rng);
    }
    labels
}

fn stage_pct(labels: &[SleepStage], stage: SleepStage) -> f64 {
    100.0 * labels.iter().filter(|s| **s == stage).count() as f64 / labels.len() as f64
}

/// Draws stage sequences until the WAKE and REM fractions land near their
/// long-run targets, keeping the closest attempt if none qualifies.
fn sample_labels(n_epochs: usize, rng: &mut ChaCha8Rng) -> Vec<SleepStage> {
    let mut best: Option<(f64, Vec<SleepStage>)> = None;
    for _ in 0..MAX_SEQUENCE_ATTEMPTS {
        let labels = sample_sequence(n_epochs, rng);
        let wake_err = (stage_pct(&labels, SleepStage::Wake) - TARGET_WAKE_PCT).abs();
        let rem_err = (stage_pct(&labels, SleepStage::Rem) - TARGET_REM_PCT).abs();
        let err = wake_err.max(rem_err);
        if err <= MIX_TOLERANCE_PP {
            return labels;
        }
        if best.as_ref().map_or(true, |(e, _)| err < *e) {
            best = Some((err, labels));
        }
    }
    let (err, labels) = best.unwrap();
    log::warn!(
        "stage mix stayed {err:.1} pp off target after {MAX_SEQUENCE_ATTEMPTS} attempts; \
         keeping the closest sequence"
    );
    labels
}

struct Episode {
    start_epoch: usize,
    len_epochs: usize,
    stage: SleepStage,
    resp_bpm: f64,
    rem_fm_phase: f64,
}

fn episodes(labels: &[SleepStage], rng: &mut ChaCha8Rng) -> Vec<Episode> {
    let mut out: Vec<Episode> = Vec::new();
    for (i, stage) in labels.iter().enumerate() {
        if let Some(last) = out.last_mut() {
            if last.stage == *stage {
                last.len_epochs += 1;
                continue;
            }
        }
        let phys = StagePhysiology::for_stage(*stage);
        out.push(Episode {
            start_epoch: i,
            len_epochs: 1,
            stage: *stage,
            resp_bpm: rng.gen_range(phys.resp_bpm_range.0..phys.resp_bpm_range.1),
            rem_fm_phase: rng.gen_range(0.0..2.0 * std::f64::consts::PI),
        });
    }
    out
}

/// Per-sample targets before ramp smoothing.
#[derive(Clone, Copy)]
struct SampleTargets {
    resp_hz: f64,
    heart_scale: f64,
    breath_scale: f64,
    movement_per_min: f64,
    rsa_depth: f64,
}

fn episode_targets(ep: &Episode, t_abs: f64) -> SampleTargets {
    let phys = StagePhysiology::for_stage(ep.stage);
    let mut resp_hz = ep.resp_bpm / 60.0;
    if ep.stage == SleepStage::Rem {
        resp_hz *= 1.0
            + REM_RESP_FM_DEPTH
                * (2.0 * std::f64::consts::PI * REM_RESP_FM_HZ * t_abs + ep.rem_fm_phase).sin();
    }
    SampleTargets {
        resp_hz,
        heart_scale: phys.heart_scale,
        breath_scale: phys.breath_scale,
        movement_per_min: phys.movement_per_min,
        rsa_depth: phys.rsa_depth,
    }
}

fn night_tracks(
    labels: &[SleepStage],
    epoch_s: f64,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> VitalsTracks {
    let base_heart_hz = rng.gen_range(BASE_HEART_RANGE_BPM.0..BASE_HEART_RANGE_BPM.1) / 60.0;
    let eps = episodes(labels, rng);
    let samples_per_epoch = (epoch_s * rate).round() as usize;
    let n = labels.len() * samples_per_epoch;

    let mut tracks = VitalsTracks {
        rate,
        resp_hz: Vec::with_capacity(n),
        heart_hz: Vec::with_capacity(n),
        resp_phase: Vec::with_capacity(n),
        heart_phase: Vec::with_capacity(n),
        breath_scale: Vec::with_capacity(n),
        movement_per_min: Vec::with_capacity(n),
    };
    let mut resp_phase = 0.0f64;
    let mut heart_phase = 0.0f64;
    let mut prev: Option<SampleTargets> = None;
    for ep in &eps {
        let ep_start = ep.start_epoch * samples_per_epoch;
        let ramp_samples = (RAMP_S * rate).round() as usize;
        for j in 0..ep.len_epochs * samples_per_epoch {
            let i = ep_start + j;
            let t_abs = i as f64 / rate;
            let target = episode_targets(ep, t_abs);
            let current = match prev {
                // Blend from the values at the episode boundary into the new
                // episode's targets over the first few seconds.
                Some(from) if j < ramp_samples => {
                    let w = j as f64 / ramp_samples as f64;
                    SampleTargets {
                        resp_hz: from.resp_hz + w * (target.resp_hz - from.resp_hz),
                        heart_scale: from.heart_scale + w * (target.heart_scale - from.heart_scale),
                        breath_scale: from.breath_scale
                            + w * (target.breath_scale - from.breath_scale),
                        movement_per_min: from.movement_per_min
                            + w * (target.movement_per_min - from.movement_per_min),
                        rsa_depth: from.rsa_depth + w * (target.rsa_depth - from.rsa_depth),
                    }
                }
                _ => target,
            };
            let heart_hz =
                base_heart_hz * current.heart_scale / (1.0 + current.rsa_depth * resp_phase.sin());
            tracks.resp_hz.push(current.resp_hz);
            tracks.heart_hz.push(heart_hz);
            tracks.resp_phase.push(resp_phase);
            tracks.heart_phase.push(heart_phase);
            tracks.breath_scale.push(current.breath_scale);
            tracks.movement_per_min.push(current.movement_per_min);
            resp_phase += 2.0 * std::f64::consts::PI * current.resp_hz / rate;
            heart_phase += 2.0 * std::f64::consts::PI * heart_hz / rate;
        }
        let boundary_t = (ep_start + ep.len_epochs * samples_per_epoch) as f64 / rate;
        prev = Some(episode_targets(ep, boundary_t));
    }
    tracks
}

/// A complete simulated night: CSI, ECG with true R peaks, per-epoch stage
/// labels, and the tracks and channel parameters that produced them.
#[derive(Debug, Clone)]
pub struct NightRecord {
    pub csi: CsiRecording,
    pub ecg: EcgTrace,
    pub r_indices: Vec<usize>,
    pub labels: Vec<SleepStage>,
    pub tracks: VitalsTracks,
    pub movement_mask: Vec<bool>,
    pub movement_events: Vec<(f64, f64)>,
    pub scenario: ChannelScenario,
}

impl NightRecord {
    pub fn samples_per_epoch(&self) -> usize {
        self.tracks.len() / self.labels.len()
    }
}

/// Simulates one night. `stage_plan` overrides the sequencer with a caller
/// supplied label per epoch; its length must match the night exactly.
pub fn generate_sleep_night(
    cfg: &NightConfig,
    seed: u64,
    stage_plan: Option<&[SleepStage]>,
) -> Result<NightRecord> {
    let (n_epochs, _) = cfg.validate()?;
    let labels = match stage_plan {
        Some(plan) => {
            if plan.len() != n_epochs {
                return Err(CoreError::Config(format!(
                    "stage plan has {} epochs but the night needs {n_epochs}",
                    plan.len()
                )));
            }
            plan.to_vec()
        }
        None => sample_labels(n_epochs, &mut stream_rng(seed, STREAM_STAGES)),
    };
    let tracks = night_tracks(
        &labels,
        cfg.epoch_s,
        cfg.csi_rate,
        &mut stream_rng(seed, STREAM_PHYSIOLOGY),
    );
    let scenario = ChannelScenario::sample(
        cfg.environment,
        cfg.snr_db,
        cfg.num_subcarriers,
        cfg.num_antennas,
        &mut stream_rng(seed, STREAM_SCENARIO),
    )?;
    let (csi, trace) = synthesize_csi(&tracks, &scenario, seed)?;
    let (ecg, r_indices) = generate_ecg_from_tracks(&tracks, cfg.ecg_rate, cfg.ecg_snr_db, seed)?;
    Ok(NightRecord {
        csi,
        ecg,
        r_indices,
        labels,
        tracks,
        movement_mask: trace.movement_mask,
        movement_events: trace.movement_events,
        scenario,
    })
}
