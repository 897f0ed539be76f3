//! In-memory training datasets and target standardization.
//!
//! Feature windows are stored as `f32` to halve the memory footprint of the
//! larger corpora; batches are widened back to `f64` tensors on assembly.

use crate::error::{CoreError, Result};
use crate::models::SleepStage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wisp_nn::Tensor;

/// Labeled windows for the two-head vitals regressor.
#[derive(Debug, Clone)]
pub struct VitalsDataset {
    shape: [usize; 3],
    features: Vec<Vec<f32>>,
    heart_bpm: Vec<f64>,
    resp_bpm: Vec<f64>,
}

fn check_window(shape: &[usize; 3], window: &Tensor) -> Result<Vec<f32>> {
    if window.shape() != shape {
        return Err(CoreError::Config(format!(
            "window shape {:?} does not match dataset shape {:?}",
            window.shape(),
            shape
        )));
    }
    if !window.all_finite() {
        return Err(CoreError::Numeric("window contains non-finite values".into()));
    }
    Ok(window.data().iter().map(|v| *v as f32).collect())
}

fn assemble_batch(shape: &[usize; 3], features: &[Vec<f32>], indices: &[usize]) -> Result<Tensor> {
    if indices.iter().any(|i| *i >= features.len()) {
        return Err(CoreError::Range("batch index out of range".into()));
    }
    let per_sample = shape[0] * shape[1] * shape[2];
    let mut data = Vec::with_capacity(indices.len() * per_sample);
    for i in indices {
        data.extend(features[*i].iter().map(|v| *v as f64));
    }
    Tensor::from_vec(&[indices.len(), shape[0], shape[1], shape[2]], data).map_err(Into::into)
}

impl VitalsDataset {
    pub fn new(shape: [usize; 3]) -> Result<Self> {
        if shape.iter().any(|d| *d == 0) {
            return Err(CoreError::Config(format!("degenerate window shape {shape:?}")));
        }
        Ok(VitalsDataset {
            shape,
            features: Vec::new(),
            heart_bpm: Vec::new(),
            resp_bpm: Vec::new(),
        })
    }

    pub fn push(&mut self, window: &Tensor, heart_bpm: f64, resp_bpm: f64) -> Result<()> {
        if !(heart_bpm.is_finite() && resp_bpm.is_finite()) || heart_bpm < 0.0 || resp_bpm < 0.0 {
            return Err(CoreError::Range(format!(
                "target rates must be finite and non-negative, got {heart_bpm} / {resp_bpm} bpm"
            )));
        }
        let values = check_window(&self.shape, window)?;
        self.features.push(values);
        self.heart_bpm.push(heart_bpm);
        self.resp_bpm.push(resp_bpm);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn heart_bpm(&self) -> &[f64] {
        &self.heart_bpm
    }

    pub fn resp_bpm(&self) -> &[f64] {
        &self.resp_bpm
    }

    /// Stacks the selected windows into a `[n, rows, cols, channels]` tensor
    /// with the matching target slices, in index order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
        let x = assemble_batch(&self.shape, &self.features, indices)?;
        let hr = indices.iter().map(|i| self.heart_bpm[*i]).collect();
        let rr = indices.iter().map(|i| self.resp_bpm[*i]).collect();
        Ok((x, hr, rr))
    }

    /// Seeded shuffled split into train and validation parts.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&val_fraction) || val_fraction == 0.0 {
            return Err(CoreError::Config(format!(
                "validation fraction must be in (0, 1), got {val_fraction}"
            )));
        }
        if self.len() < 2 {
            return Err(CoreError::Config("need at least 2 samples to split".into()));
        }
        let mut indices: Vec<usize> = (0..self.len()).collect();
        indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((self.len() as f64 * val_fraction).round() as usize).clamp(1, self.len() - 1);
        let mut val = VitalsDataset::new(self.shape)?;
        let mut train = VitalsDataset::new(self.shape)?;
        for (pos, i) in indices.into_iter().enumerate() {
            let part = if pos < n_val { &mut val } else { &mut train };
            part.features.push(self.features[i].clone());
            part.heart_bpm.push(self.heart_bpm[i]);
            part.resp_bpm.push(self.resp_bpm[i]);
        }
        Ok((train, val))
    }
}

/// Labeled windows for the sleep stagers.
#[derive(Debug, Clone)]
pub struct StageDataset {
    shape: [usize; 3],
    features: Vec<Vec<f32>>,
    labels: Vec<SleepStage>,
}

impl StageDataset {
    pub fn new(shape: [usize; 3]) -> Result<Self> {
        if shape.iter().any(|d| *d == 0) {
            return Err(CoreError::Config(format!("degenerate window shape {shape:?}")));
        }
        Ok(StageDataset {
            shape,
            features: Vec::new(),
            labels: Vec::new(),
        })
    }

    pub fn push(&mut self, window: &Tensor, stage: SleepStage) -> Result<()> {
        let values = check_window(&self.shape, window)?;
        self.features.push(values);
        self.labels.push(stage);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn labels(&self) -> &[SleepStage] {
        &self.labels
    }

    /// Appends every window of `other`; shapes must match.
    pub fn merge(&mut self, other: &StageDataset) -> Result<()> {
        if other.shape != self.shape {
            return Err(CoreError::Config(format!(
                "cannot merge windows of shape {:?} into {:?}",
                other.shape, self.shape
            )));
        }
        self.features.extend(other.features.iter().cloned());
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }

    /// Stacks the selected windows with their class indices, in index order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = assemble_batch(&self.shape, &self.features, indices)?;
        let labels = indices.iter().map(|i| self.labels[*i].index()).collect();
        Ok((x, labels))
    }

    pub fn class_counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for stage in &self.labels {
            counts[stage.index()] += 1;
        }
        counts
    }

    /// Per-class weights proportional to inverse frequency, scaled so the
    /// present classes average to 1. Absent classes get weight 0.
    pub fn inverse_frequency_weights(&self) -> [f64; 4] {
        let counts = self.class_counts();
        let raw: Vec<f64> = counts
            .iter()
            .map(|c| if *c == 0 { 0.0 } else { 1.0 / *c as f64 })
            .collect();
        let present = counts.iter().filter(|c| **c > 0).count();
        let sum: f64 = raw.iter().sum();
        if present == 0 || sum == 0.0 {
            return [0.0; 4];
        }
        let scale = present as f64 / sum;
        let mut weights = [0.0; 4];
        for (w, r) in weights.iter_mut().zip(raw) {
            *w = r * scale;
        }
        weights
    }
}

/// Z-score standardization of regression targets, fit on the training split
/// and persisted in checkpoint metadata so saved models stay usable.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetScaler {
    pub heart_mean: f64,
    pub heart_std: f64,
    pub resp_mean: f64,
    pub resp_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // A constant target column still needs an invertible transform.
    if std < 1e-12 {
        (mean, 1.0)
    } else {
        (mean, std)
    }
}

impl TargetScaler {
    pub fn fit(dataset: &VitalsDataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(CoreError::Config("cannot fit a scaler on an empty dataset".into()));
        }
        let (heart_mean, heart_std) = mean_std(dataset.heart_bpm());
        let (resp_mean, resp_std) = mean_std(dataset.resp_bpm());
        Ok(TargetScaler {
            heart_mean,
            heart_std,
            resp_mean,
            resp_std,
        })
    }

    pub fn standardize_heart(&self, bpm: f64) -> f64 {
        (bpm - self.heart_mean) / self.heart_std
    }

    pub fn standardize_resp(&self, bpm: f64) -> f64 {
        (bpm - self.resp_mean) / self.resp_std
    }

    pub fn destandardize_heart(&self, z: f64) -> f64 {
        z * self.heart_std + self.heart_mean
    }

    pub fn destandardize_resp(&self, z: f64) -> f64 {
        z * self.resp_std + self.resp_mean
    }

    pub fn to_meta(&self) -> serde_json::Value {
        serde_json::json!({
            "heart_mean": self.heart_mean,
            "heart_std": self.heart_std,
            "resp_mean": self.resp_mean,
            "resp_std": self.resp_std,
        })
    }

    pub fn from_meta(meta: &serde_json::Value) -> Result<Self> {
        let field = |name: &str| -> Result<f64> {
            let value = meta
                .get(name)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| CoreError::MalformedData(format!("checkpoint meta lacks {name}")))?;
            if !value.is_finite() {
                return Err(CoreError::MalformedData(format!("{name} is not finite")));
            }
            Ok(value)
        };
        let scaler = TargetScaler {
            heart_mean: field("heart_mean")?,
            heart_std: field("heart_std")?,
            resp_mean: field("resp_mean")?,
            resp_std: field("resp_std")?,
        };
        if scaler.heart_std <= 0.0 || scaler.resp_std <= 0.0 {
            return Err(CoreError::MalformedData("scaler stds must be positive".into()));
        }
        Ok(scaler)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wisp_nn::Checkpoint;

    fn filled_window(shape: &[usize], value: f64) -> Tensor {
        Tensor::filled(shape, value)
    }

    #[test]
    fn push_rejects_wrong_shapes_and_bad_targets() {
        let mut ds = VitalsDataset::new([4, 3, 2]).unwrap();
        assert!(ds.push(&filled_window(&[4, 3, 1], 0.0), 70.0, 15.0).is_err());
        assert!(ds.push(&filled_window(&[4, 3, 2], 0.0), -1.0, 15.0).is_err());
        assert!(ds.push(&filled_window(&[4, 3, 2], f64::NAN), 70.0, 15.0).is_err());
        assert!(ds.push(&filled_window(&[4, 3, 2], 0.0), 70.0, 15.0).is_ok());
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn batches_preserve_sample_order_and_values() {
        let mut ds = VitalsDataset::new([2, 2, 1]).unwrap();
        ds.push(&filled_window(&[2, 2, 1], 1.0), 60.0, 12.0).unwrap();
        ds.push(&filled_window(&[2, 2, 1], 2.0), 80.0, 18.0).unwrap();
        let (x, hr, rr) = ds.batch(&[1, 0]).unwrap();
        assert_eq!(x.shape(), &[2, 2, 2, 1]);
        assert_eq!(&x.data()[..4], &[2.0; 4]);
        assert_eq!(&x.data()[4..], &[1.0; 4]);
        assert_eq!(hr, vec![80.0, 60.0]);
        assert_eq!(rr, vec![18.0, 12.0]);
        assert!(ds.batch(&[2]).is_err());
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_seeded() {
        let mut ds = VitalsDataset::new([1, 1, 1]).unwrap();
        for i in 0..10 {
            ds.push(&filled_window(&[1, 1, 1], i as f64), 60.0 + i as f64, 12.0).unwrap();
        }
        let (train, val) = ds.split(0.2, 7).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 2);
        let mut seen: Vec<f64> = train
            .heart_bpm()
            .iter()
            .chain(val.heart_bpm())
            .copied()
            .collect();
        seen.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (0..10).map(|i| 60.0 + i as f64).collect();
        assert_eq!(seen, expected);
        let (train2, val2) = ds.split(0.2, 7).unwrap();
        assert_eq!(train.heart_bpm(), train2.heart_bpm());
        assert_eq!(val.heart_bpm(), val2.heart_bpm());
        assert!(ds.split(0.0, 1).is_err());
    }

    #[test]
    fn scaler_fit_matches_hand_statistics() {
        let mut ds = VitalsDataset::new([1, 1, 1]).unwrap();
        ds.push(&filled_window(&[1, 1, 1], 0.0), 60.0, 10.0).unwrap();
        ds.push(&filled_window(&[1, 1, 1], 0.0), 80.0, 20.0).unwrap();
        let scaler = TargetScaler::fit(&ds).unwrap();
        assert_eq!(scaler.heart_mean, 70.0);
        assert_eq!(scaler.heart_std, 10.0);
        assert_eq!(scaler.resp_mean, 15.0);
        assert_eq!(scaler.resp_std, 5.0);
        let z = scaler.standardize_heart(75.0);
        assert!((z - 0.5).abs() < 1e-15);
        assert!((scaler.destandardize_heart(z) - 75.0).abs() < 1e-12);
    }

    #[test]
    fn scaler_handles_constant_targets() {
        let mut ds = VitalsDataset::new([1, 1, 1]).unwrap();
        ds.push(&filled_window(&[1, 1, 1], 0.0), 72.0, 15.0).unwrap();
        ds.push(&filled_window(&[1, 1, 1], 0.0), 72.0, 15.0).unwrap();
        let scaler = TargetScaler::fit(&ds).unwrap();
        assert_eq!(scaler.heart_std, 1.0);
        assert_eq!(scaler.standardize_heart(72.0), 0.0);
    }

    #[test]
    fn scaler_round_trips_through_checkpoint_meta() {
        let scaler = TargetScaler {
            heart_mean: 71.25,
            heart_std: 8.5,
            resp_mean: 15.75,
            resp_std: 2.25,
        };
        let graph = crate::models::build_cpcnet(&crate::models::CpcNetConfig {
            rows: 16,
            cols: 16,
            filters: [1, 1, 1, 1],
            seed: 0,
        })
        .unwrap();
        let ckpt = Checkpoint::with_meta(graph, scaler.to_meta());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(TargetScaler::from_meta(&loaded.meta).unwrap(), scaler);
        assert!(TargetScaler::from_meta(&serde_json::json!({})).is_err());
    }

    #[test]
    fn class_weights_follow_inverse_frequency() {
        let mut ds = StageDataset::new([1, 1, 1]).unwrap();
        let pushes = [
            (SleepStage::Wake, 10),
            (SleepStage::Rem, 5),
            (SleepStage::Deep, 5),
        ];
        for (stage, count) in pushes {
            for _ in 0..count {
                ds.push(&filled_window(&[1, 1, 1], 0.0), stage).unwrap();
            }
        }
        assert_eq!(ds.class_counts(), [10, 5, 0, 5]);
        let w = ds.inverse_frequency_weights();
        assert!((w[0] - 0.6).abs() < 1e-12);
        assert!((w[1] - 1.2).abs() < 1e-12);
        assert_eq!(w[2], 0.0);
        assert!((w[3] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn stage_batches_carry_class_indices() {
        let mut ds = StageDataset::new([1, 2, 1]).unwrap();
        ds.push(&filled_window(&[1, 2, 1], 0.5), SleepStage::Deep).unwrap();
        ds.push(&filled_window(&[1, 2, 1], 1.5), SleepStage::Wake).unwrap();
        let (x, labels) = ds.batch(&[0, 1]).unwrap();
        assert_eq!(x.shape(), &[2, 1, 2, 1]);
        assert_eq!(labels, vec![3, 0]);
    }
}
