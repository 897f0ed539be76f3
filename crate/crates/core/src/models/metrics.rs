//! Evaluation metrics: absolute and percentage errors for the vitals heads,
//! confusion-matrix statistics for the stagers.

use crate::error::{CoreError, Result};
use crate::models::{SleepStage, StageDataset, TargetScaler, VitalsDataset};
use std::io::Write;
use std::path::Path;
use wisp_nn::ModelGraph;

/// Samples per forward pass during evaluation.
const EVAL_BATCH: usize = 64;

/// Regression quality of one prediction column.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMetrics {
    pub mae: f64,
    /// Mean absolute percentage error; samples with zero truth are excluded.
    pub mape_pct: f64,
    /// 100 minus the percentage error.
    pub accuracy_pct: f64,
    /// Absolute errors sorted ascending, for error-CDF plots.
    pub abs_errors: Vec<f64>,
    /// Samples left out of the percentage error because their truth was zero.
    pub excluded_zero_truth: usize,
}

/// Metrics for both vitals heads.
#[derive(Debug, Clone, PartialEq)]
pub struct VitalsMetrics {
    pub heart: RateMetrics,
    pub resp: RateMetrics,
    pub heart_mae: f64,
    pub resp_mae: f64,
}

fn rate_metrics(pred: &[f64], truth: &[f64]) -> Result<RateMetrics> {
    if pred.len() != truth.len() {
        return Err(CoreError::Config(format!(
            "{} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(CoreError::Config("no samples to evaluate".into()));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(CoreError::Numeric("non-finite value in evaluation".into()));
    }
    let mut abs_errors: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    let mae = abs_errors.iter().sum::<f64>() / abs_errors.len() as f64;
    abs_errors.sort_by(f64::total_cmp);

    let mut pct_sum = 0.0;
    let mut pct_count = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if *t == 0.0 {
            continue;
        }
        pct_sum += ((p - t) / t).abs() * 100.0;
        pct_count += 1;
    }
    let excluded_zero_truth = pred.len() - pct_count;
    if excluded_zero_truth > 0 {
        log::warn!("{excluded_zero_truth} samples with zero truth excluded from the percentage error");
    }
    if pct_count == 0 {
        return Err(CoreError::Config("every truth value is zero; percentage error undefined".into()));
    }
    let mape_pct = pct_sum / pct_count as f64;
    Ok(RateMetrics {
        mae,
        mape_pct,
        accuracy_pct: 100.0 - mape_pct,
        abs_errors,
        excluded_zero_truth,
    })
}

/// Computes both heads' metrics from raw prediction/truth pairs in bpm.
pub fn vitals_metrics(
    pred_heart: &[f64],
    truth_heart: &[f64],
    pred_resp: &[f64],
    truth_resp: &[f64],
) -> Result<VitalsMetrics> {
    let heart = rate_metrics(pred_heart, truth_heart)?;
    let resp = rate_metrics(pred_resp, truth_resp)?;
    let heart_mae = heart.mae;
    let resp_mae = resp.mae;
    Ok(VitalsMetrics {
        heart,
        resp,
        heart_mae,
        resp_mae,
    })
}

/// Runs the regressor over a dataset in inference mode and scores the
/// de-standardized predictions against the stored targets.
pub fn evaluate_vitals(
    graph: &ModelGraph,
    dataset: &VitalsDataset,
    scaler: &TargetScaler,
) -> Result<VitalsMetrics> {
    if dataset.is_empty() {
        return Err(CoreError::Config("no samples to evaluate".into()));
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut pred_heart = Vec::with_capacity(dataset.len());
    let mut pred_resp = Vec::with_capacity(dataset.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, _, _) = dataset.batch(chunk)?;
        let outs = graph.predict(&x)?;
        pred_heart.extend(outs[0].data().iter().map(|z| scaler.destandardize_heart(*z)));
        pred_resp.extend(outs[1].data().iter().map(|z| scaler.destandardize_resp(*z)));
    }
    vitals_metrics(&pred_heart, dataset.heart_bpm(), &pred_resp, dataset.resp_bpm())
}

/// Confusion-matrix statistics for a four-class stager.
#[derive(Debug, Clone, PartialEq)]
pub struct StageMetrics {
    /// `confusion[t][p]`: epochs of true stage `t` predicted as stage `p`,
    /// indexed by [`SleepStage::index`].
    pub confusion: [[usize; 4]; 4],
    /// Row-normalized confusion in percent (rows with no epochs stay zero).
    pub row_pct: [[f64; 4]; 4],
    /// Diagonal mass over total, in percent.
    pub overall_accuracy_pct: f64,
    /// Per-class recall in percent; `None` for classes absent from the truth.
    pub per_class_recall_pct: [Option<f64>; 4],
    /// Mean recall over the classes present in the truth.
    pub macro_recall_pct: f64,
}

/// Builds confusion statistics from prediction/truth pairs.
pub fn stage_metrics(pred: &[SleepStage], truth: &[SleepStage]) -> Result<StageMetrics> {
    if pred.len() != truth.len() {
        return Err(CoreError::Config(format!(
            "{} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(CoreError::Config("no epochs to evaluate".into()));
    }
    let mut confusion = [[0usize; 4]; 4];
    for (p, t) in pred.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
    }
    let total: usize = pred.len();
    let diagonal: usize = (0..4).map(|i| confusion[i][i]).sum();
    let overall_accuracy_pct = diagonal as f64 / total as f64 * 100.0;

    let mut row_pct = [[0.0; 4]; 4];
    let mut per_class_recall_pct = [None; 4];
    let mut recall_sum = 0.0;
    let mut present = 0usize;
    for t in 0..4 {
        let row_total: usize = confusion[t].iter().sum();
        if row_total == 0 {
            log::warn!(
                "stage {} absent from the truth; excluded from macro recall",
                SleepStage::ALL[t].name()
            );
            continue;
        }
        for p in 0..4 {
            row_pct[t][p] = confusion[t][p] as f64 / row_total as f64 * 100.0;
        }
        per_class_recall_pct[t] = Some(row_pct[t][t]);
        recall_sum += row_pct[t][t];
        present += 1;
    }
    let macro_recall_pct = recall_sum / present as f64;
    Ok(StageMetrics {
        confusion,
        row_pct,
        overall_accuracy_pct,
        per_class_recall_pct,
        macro_recall_pct,
    })
}

impl StageMetrics {
    /// Confusion-matrix CSV: header row of predicted stages, one row per
    /// true stage with raw epoch counts.
    pub fn write_confusion_csv<W: Write>(&self, writer: &mut W) -> Result<()> {
        let names: Vec<&str> = SleepStage::ALL.iter().map(|s| s.name()).collect();
        writeln!(writer, "true\\pred,{}", names.join(","))?;
        for (t, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(writer, "{},{}", names[t], cells.join(","))?;
        }
        Ok(())
    }

    pub fn save_confusion(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut writer = std::io::BufWriter::new(file);
        self.write_confusion_csv(&mut writer)?;
        writer.flush()?;
        Ok(())
    }
}

/// Index of the most probable class; earlier classes win exact ties.
pub fn argmax_stage(probs: &[f64]) -> Result<SleepStage> {
    if probs.len() != SleepStage::COUNT {
        return Err(CoreError::Config(format!(
            "expected {} probabilities, got {}",
            SleepStage::COUNT,
            probs.len()
        )));
    }
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if !p.is_finite() {
            return Err(CoreError::Numeric("non-finite class probability".into()));
        }
        if *p > probs[best] {
            best = i;
        }
    }
    SleepStage::from_index(best)
}

/// Runs a stager over a dataset in inference mode and scores the argmax
/// predictions against the stored labels.
pub fn evaluate_stages(graph: &ModelGraph, dataset: &StageDataset) -> Result<StageMetrics> {
    if dataset.is_empty() {
        return Err(CoreError::Config("no epochs to evaluate".into()));
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut pred = Vec::with_capacity(dataset.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, _) = dataset.batch(chunk)?;
        let outs = graph.predict(&x)?;
        for row in outs[0].data().chunks(SleepStage::COUNT) {
            pred.push(argmax_stage(row)?);
        }
    }
    stage_metrics(&pred, dataset.labels())
}
