//! Dataset assembly from scenario manifests on disk, plus the prediction
//! helpers and checkpoint metadata shared by `train` and `eval`.

use crate::config::ExperimentConfig;
use crate::{CliError, CliResult};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use wisp_core::cpc::CpcConfig;
use wisp_core::corpus::{coupling_map_from_ecg, cpc_windows, stage_windows, standardize_feature_columns};
use wisp_core::csi::{condition_recording, features_from_conditioned, CsiRecording, FilterConfig};
use wisp_core::ecg::{EcgTrace, QrsConfig};
use wisp_core::models::{argmax_stage, SleepStage, StageDataset, TargetScaler, VitalsDataset};
use wisp_core::synth::{read_labels_csv, ScenarioManifest};
use wisp_nn::ModelGraph;

const PREDICT_BATCH: usize = 64;

/// Everything `eval` needs to rebuild the training-time pipeline: the
/// architecture, its input shape, and the preprocessing that fed it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: String,
    pub task: String,
    pub input_shape: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_rate_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qrs: Option<QrsConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cpc: Option<CpcConfig>,
    /// Target z-scoring parameters for the regression heads.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaler: Option<serde_json::Value>,
}

impl CheckpointMeta {
    pub fn to_value(&self) -> CliResult<serde_json::Value> {
        serde_json::to_value(self)
            .map_err(|e| CliError::Input(format!("serializing checkpoint metadata: {e}")))
    }

    pub fn from_value(value: &serde_json::Value) -> CliResult<Self> {
        serde_json::from_value(value.clone())
            .map_err(|e| CliError::Input(format!("checkpoint metadata: {e}")))
    }

    pub fn scaler(&self) -> CliResult<TargetScaler> {
        let value = self
            .scaler
            .as_ref()
            .ok_or_else(|| CliError::Input("checkpoint has no target scaler".into()))?;
        Ok(TargetScaler::from_meta(value)?)
    }
}

/// Expands the `--data` arguments: files stay, directories contribute their
/// `.json` entries in name order so runs are reproducible.
pub fn collect_manifests(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut manifests = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| CliError::Input(format!("cannot list {}: {e}", path.display())))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
                .collect();
            entries.sort();
            manifests.extend(entries);
        } else {
            manifests.push(path.clone());
        }
    }
    if manifests.is_empty() {
        return Err(CliError::Input("no scenario manifests found".into()));
    }
    Ok(manifests)
}

struct LoadedManifest {
    manifest: ScenarioManifest,
    dir: PathBuf,
    path: PathBuf,
}

impl LoadedManifest {
    fn open(path: &Path) -> CliResult<Self> {
        let manifest = ScenarioManifest::load(path)?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(LoadedManifest { manifest, dir, path: path.to_path_buf() })
    }

    fn expect_kind(&self, kind: &str) -> CliResult<()> {
        if self.manifest.kind != kind {
            return Err(CliError::Input(format!(
                "{} is a {:?} scenario, need {kind:?}",
                self.path.display(),
                self.manifest.kind
            )));
        }
        Ok(())
    }

    fn csi(&self) -> CliResult<CsiRecording> {
        Ok(CsiRecording::load(&self.dir.join(&self.manifest.csi_file))?)
    }

    fn ecg(&self) -> CliResult<EcgTrace> {
        let file = self.manifest.ecg_file.as_ref().ok_or_else(|| {
            CliError::Input(format!("{} lists no ECG file", self.path.display()))
        })?;
        Ok(EcgTrace::load(&self.dir.join(file))?)
    }

    fn labels(&self) -> CliResult<Vec<SleepStage>> {
        let file = self.manifest.labels_file.as_ref().ok_or_else(|| {
            CliError::Input(format!("{} lists no label file", self.path.display()))
        })?;
        Ok(read_labels_csv(&self.dir.join(file))?)
    }
}

/// One window per vitals manifest: the recording's leading `window_s`
/// seconds, labeled with the manifest's realized mean rates. A window-level
/// split therefore holds out whole scenarios.
pub fn vitals_dataset(
    manifests: &[PathBuf],
    window_s: f64,
    feature_rate_hz: f64,
    filter: &FilterConfig,
) -> CliResult<VitalsDataset> {
    let rows = (window_s * feature_rate_hz).round() as usize;
    let mut dataset: Option<VitalsDataset> = None;
    for path in manifests {
        let loaded = LoadedManifest::open(path)?;
        loaded.expect_kind("vitals")?;
        let truth = loaded.manifest.truth.as_ref().ok_or_else(|| {
            CliError::Input(format!("{} has no ground-truth rates", path.display()))
        })?;
        let recording = loaded.csi()?;
        let conditioned = condition_recording(&recording, &filter.hampel)?;
        let mut q = features_from_conditioned(&conditioned, window_s, feature_rate_hz, filter)?;
        standardize_feature_columns(&mut q.data)?;
        if dataset.is_none() {
            dataset = Some(VitalsDataset::new([rows, recording.num_subcarriers(), 2])?);
        }
        let dataset = dataset.as_mut().expect("just initialized");
        dataset.push(&q.data, truth.mean_heart_bpm, truth.mean_resp_bpm)?;
    }
    Ok(dataset.expect("collect_manifests guarantees at least one manifest"))
}

/// One labeled epoch set per night manifest, from the raw CSI.
pub fn stage_datasets(
    manifests: &[PathBuf],
    feature_rate_hz: f64,
    filter: &FilterConfig,
) -> CliResult<Vec<StageDataset>> {
    manifests
        .iter()
        .map(|path| {
            let loaded = LoadedManifest::open(path)?;
            loaded.expect_kind("night")?;
            let csi = loaded.csi()?;
            let labels = loaded.labels()?;
            Ok(stage_windows(&csi, &labels, feature_rate_hz, filter)?)
        })
        .collect()
}

/// One labeled patch set per night manifest, from the ECG coupling map.
pub fn cpc_datasets(
    manifests: &[PathBuf],
    qrs: &QrsConfig,
    cpc: &CpcConfig,
    patch_epochs: usize,
) -> CliResult<Vec<StageDataset>> {
    manifests
        .iter()
        .map(|path| {
            let loaded = LoadedManifest::open(path)?;
            loaded.expect_kind("night")?;
            let epoch_s = loaded.manifest.epoch_s.ok_or_else(|| {
                CliError::Input(format!("{} lists no epoch length", path.display()))
            })?;
            let ecg = loaded.ecg()?;
            let labels = loaded.labels()?;
            let map = coupling_map_from_ecg(&ecg, qrs, cpc)?;
            Ok(cpc_windows(&map, &labels, epoch_s, patch_epochs)?)
        })
        .collect()
}

/// Splits whole nights into train and validation, at least one each.
pub fn split_nights(
    nights: Vec<StageDataset>,
    val_fraction: f64,
    seed: u64,
) -> CliResult<(StageDataset, StageDataset)> {
    if nights.len() < 2 {
        return Err(CliError::Input(
            "need at least 2 nights to hold validation nights out".into(),
        ));
    }
    let mut order: Vec<usize> = (0..nights.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((nights.len() as f64 * val_fraction).round() as usize).clamp(1, nights.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let merge = |indices: &[usize]| -> CliResult<StageDataset> {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        let mut merged: Option<StageDataset> = None;
        for &i in &sorted {
            match &mut merged {
                Some(d) => d.merge(&nights[i])?,
                None => merged = Some(nights[i].clone()),
            }
        }
        Ok(merged.expect("split sides are non-empty"))
    };
    Ok((merge(train_idx)?, merge(val_idx)?))
}

/// De-standardized per-window rate predictions, batched for cache reuse.
pub fn predict_vitals(
    graph: &ModelGraph,
    dataset: &VitalsDataset,
    scaler: &TargetScaler,
) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut heart = Vec::with_capacity(dataset.len());
    let mut resp = Vec::with_capacity(dataset.len());
    for chunk in indices.chunks(PREDICT_BATCH) {
        let (x, _, _) = dataset.batch(chunk)?;
        let outs = graph.predict(&x)?;
        heart.extend(outs[0].data().iter().map(|z| scaler.destandardize_heart(*z)));
        resp.extend(outs[1].data().iter().map(|z| scaler.destandardize_resp(*z)));
    }
    Ok((heart, resp))
}

/// Per-epoch stage predictions.
pub fn predict_stages(graph: &ModelGraph, dataset: &StageDataset) -> CliResult<Vec<SleepStage>> {
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut stages = Vec::with_capacity(dataset.len());
    for chunk in indices.chunks(PREDICT_BATCH) {
        let (x, _) = dataset.batch(chunk)?;
        let outs = graph.predict(&x)?;
        for probs in outs[0].data().chunks(SleepStage::COUNT) {
            stages.push(argmax_stage(probs)?);
        }
    }
    Ok(stages)
}

/// Filter counts for a model name, from the experiment config.
pub fn filters_for(cfg: &ExperimentConfig, model: &str) -> Vec<usize> {
    match model {
        "w2sn" => cfg.train.w2sn_filters.clone(),
        "cpcnet" => cfg.train.cpcnet_filters.clone(),
        _ => cfg.train.h3rn_filters.clone(),
    }
}

/// Output file stem for a command input: the file name minus its extension
/// and any trailing `.csi`/`.ecg`/`.labels` role marker.
pub fn base_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    for marker in [".csi", ".ecg", ".labels", ".features"] {
        if let Some(prefix) = stem.strip_suffix(marker) {
            return prefix.to_string();
        }
    }
    stem
}
