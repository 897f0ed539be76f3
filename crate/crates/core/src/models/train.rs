//! Mini-batch training loops for the vitals regressor and the sleep stagers.
//!
//! Both loops are single-threaded and seeded: the same configuration on the
//! same dataset reproduces the loss curve bit for bit.

use crate::error::{CoreError, Result};
use crate::models::{
    evaluate_stages, evaluate_vitals, StageDataset, TargetScaler, TaskKind, VitalsDataset,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;
use wisp_nn::{mse, Adam, ModelGraph, Tensor};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam step size.
    pub learning_rate: f64,
    /// Seed for shuffling; parameter initialization is seeded by the builder.
    pub seed: u64,
    /// Stop after this many epochs without validation improvement and restore
    /// the best parameters seen. Requires a validation set.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CoreError::Config("need at least one epoch".into()));
        }
        if self.batch_size < 2 {
            return Err(CoreError::Config(
                "batch size must be at least 2 (batch normalization needs batch statistics)".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(CoreError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(p) = self.early_stop_patience {
            if p == 0 {
                return Err(CoreError::Config("early-stop patience must be at least 1".into()));
            }
        }
        Ok(())
    }
}

/// One row of a training report.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_heart_mae: Option<f64>,
    pub val_resp_mae: Option<f64>,
    pub val_accuracy_pct: Option<f64>,
}

/// Per-epoch training history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub task: TaskKind,
    pub epochs: Vec<EpochReport>,
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

impl TrainingReport {
    pub fn write_csv<W: Write>(&self, writer: &mut W) -> Result<()> {
        match self.task {
            TaskKind::Vitals => {
                writeln!(writer, "epoch,train_loss,val_mae_hr,val_mae_rr")?;
                for row in &self.epochs {
                    writeln!(
                        writer,
                        "{},{},{},{}",
                        row.epoch,
                        row.train_loss,
                        fmt_opt(row.val_heart_mae),
                        fmt_opt(row.val_resp_mae)
                    )?;
                }
            }
            TaskKind::Stages => {
                writeln!(writer, "epoch,train_loss,val_acc")?;
                for row in &self.epochs {
                    writeln!(
                        writer,
                        "{},{},{}",
                        row.epoch,
                        row.train_loss,
                        fmt_opt(row.val_accuracy_pct)
                    )?;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut writer = std::io::BufWriter::new(file);
        self.write_csv(&mut writer)?;
        writer.flush()?;
        Ok(())
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Seeded epoch shuffling plus batching; batches of one sample are dropped
/// because batch normalization cannot compute statistics from them.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = indices.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.last().is_some_and(|b| b.len() == 1) {
        log::debug!("dropping a trailing batch of one sample");
        batches.pop();
    }
    batches
}

fn check_input_shape(graph: &ModelGraph, shape: [usize; 3]) -> Result<()> {
    if graph.input_shape != shape {
        return Err(CoreError::Config(format!(
            "dataset windows are {:?} but the graph expects {:?}",
            shape, graph.input_shape
        )));
    }
    Ok(())
}

fn column_tensor(values: &[f64]) -> Result<Tensor> {
    Tensor::from_vec(&[values.len(), 1], values.to_vec()).map_err(Into::into)
}

struct EarlyStop {
    patience: usize,
    best_metric: f64,
    best_graph: Option<ModelGraph>,
    epochs_since_best: usize,
}

impl EarlyStop {
    fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best_metric: f64::INFINITY,
            best_graph: None,
            epochs_since_best: 0,
        }
    }

    /// Records a lower-is-better metric; returns true when training should
    /// stop and the best parameters have been restored into `graph`.
    fn observe(&mut self, metric: f64, graph: &mut ModelGraph) -> bool {
        if metric < self.best_metric {
            self.best_metric = metric;
            self.best_graph = Some(graph.clone());
            self.epochs_since_best = 0;
            return false;
        }
        self.epochs_since_best += 1;
        if self.epochs_since_best >= self.patience {
            if let Some(best) = self.best_graph.take() {
                *graph = best;
            }
            return true;
        }
        false
    }
}

/// Trains the two-head regressor with a joint loss: the sum of the two
/// heads' mean squared errors on z-scored targets. Returns the history and
/// the target scaler needed to interpret the model's outputs.
pub fn train_vitals(
    graph: &mut ModelGraph,
    train_set: &VitalsDataset,
    val_set: Option<&VitalsDataset>,
    cfg: &TrainConfig,
) -> Result<(TrainingReport, TargetScaler)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(CoreError::Config("training set is empty".into()));
    }
    check_input_shape(graph, train_set.shape())?;
    if let Some(val) = val_set {
        check_input_shape(graph, val.shape())?;
    }
    if cfg.early_stop_patience.is_some() && val_set.is_none() {
        return Err(CoreError::Config("early stopping needs a validation set".into()));
    }
    let scaler = TargetScaler::fit(train_set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(cfg.learning_rate)?;
    let mut stopper = cfg.early_stop_patience.map(EarlyStop::new);
    let mut report = TrainingReport {
        task: TaskKind::Vitals,
        epochs: Vec::with_capacity(cfg.epochs),
    };

    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(train_set.len(), cfg.batch_size, &mut rng);
        if batches.is_empty() {
            return Err(CoreError::Config("training set too small to form a batch".into()));
        }
        let mut loss_sum = 0.0;
        let mut sample_count = 0usize;
        for batch in &batches {
            let (x, hr, rr) = train_set.batch(batch)?;
            let z_hr: Vec<f64> = hr.iter().map(|v| scaler.standardize_heart(*v)).collect();
            let z_rr: Vec<f64> = rr.iter().map(|v| scaler.standardize_resp(*v)).collect();
            let (outs, trace) = graph.forward_train(&x)?;
            let (loss_hr, grad_hr) = mse(&outs[0], &column_tensor(&z_hr)?)?;
            let (loss_rr, grad_rr) = mse(&outs[1], &column_tensor(&z_rr)?)?;
            let loss = loss_hr + loss_rr;
            if !loss.is_finite() {
                return Err(CoreError::Numeric(format!(
                    "training diverged at epoch {epoch}: loss {loss}"
                )));
            }
            let grads = graph.backward(&trace, &[grad_hr, grad_rr])?;
            optimizer.step(graph, &grads)?;
            loss_sum += loss * batch.len() as f64;
            sample_count += batch.len();
        }
        let train_loss = loss_sum / sample_count as f64;

        let mut row = EpochReport {
            epoch,
            train_loss,
            val_heart_mae: None,
            val_resp_mae: None,
            val_accuracy_pct: None,
        };
        if let Some(val) = val_set {
            let metrics = evaluate_vitals(graph, val, &scaler)?;
            row.val_heart_mae = Some(metrics.heart_mae);
            row.val_resp_mae = Some(metrics.resp_mae);
        }
        report.epochs.push(row.clone());
        if let Some(stopper) = stopper.as_mut() {
            let metric = row.val_heart_mae.unwrap_or(f64::INFINITY)
                + row.val_resp_mae.unwrap_or(f64::INFINITY);
            if stopper.observe(metric, graph) {
                log::info!("early stop at epoch {epoch}, best joint MAE {}", stopper.best_metric);
                break;
            }
        }
    }
    Ok((report, scaler))
}

/// Trains a stage classifier with (optionally class-weighted) cross-entropy.
pub fn train_stages(
    graph: &mut ModelGraph,
    train_set: &StageDataset,
    val_set: Option<&StageDataset>,
    cfg: &TrainConfig,
    class_weights: Option<[f64; 4]>,
) -> Result<TrainingReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(CoreError::Config("training set is empty".into()));
    }
    check_input_shape(graph, train_set.shape())?;
    if let Some(val) = val_set {
        check_input_shape(graph, val.shape())?;
    }
    if cfg.early_stop_patience.is_some() && val_set.is_none() {
        return Err(CoreError::Config("early stopping needs a validation set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(cfg.learning_rate)?;
    let mut stopper = cfg.early_stop_patience.map(EarlyStop::new);
    let mut report = TrainingReport {
        task: TaskKind::Stages,
        epochs: Vec::with_capacity(cfg.epochs),
    };

    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(train_set.len(), cfg.batch_size, &mut rng);
        if batches.is_empty() {
            return Err(CoreError::Config("training set too small to form a batch".into()));
        }
        let mut loss_sum = 0.0;
        let mut sample_count = 0usize;
        for batch in &batches {
            let (x, labels) = train_set.batch(batch)?;
            let (outs, trace) = graph.forward_train(&x)?;
            let (loss, grad) =
                wisp_nn::cross_entropy(&outs[0], &labels, class_weights.as_ref().map(|w| &w[..]))?;
            if !loss.is_finite() {
                return Err(CoreError::Numeric(format!(
                    "training diverged at epoch {epoch}: loss {loss}"
                )));
            }
            let grads = graph.backward(&trace, &[grad])?;
            optimizer.step(graph, &grads)?;
            loss_sum += loss * batch.len() as f64;
            sample_count += batch.len();
        }
        let train_loss = loss_sum / sample_count as f64;

        let mut row = EpochReport {
            epoch,
            train_loss,
            val_heart_mae: None,
            val_resp_mae: None,
            val_accuracy_pct: None,
        };
        if let Some(val) = val_set {
            let metrics = evaluate_stages(graph, val)?;
            row.val_accuracy_pct = Some(metrics.overall_accuracy_pct);
        }
        report.epochs.push(row.clone());
        if let Some(stopper) = stopper.as_mut() {
            let metric = -row.val_accuracy_pct.unwrap_or(f64::NEG_INFINITY);
            if stopper.observe(metric, graph) {
                log::info!(
                    "early stop at epoch {epoch}, best accuracy {:.3}%",
                    -stopper.best_metric
                );
                break;
            }
        }
    }
    Ok(report)
}
