//! Writers and parsers for the CSV and JSON artifacts the commands emit.
//! Each format keeps its reader next to its writer so every file the
//! harness produces can be loaded back and checked.

use crate::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use wisp_core::models::{RateMetrics, SleepStage, StageMetrics, VitalsMetrics};

fn create(path: &Path) -> CliResult<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    Ok(std::io::BufWriter::new(file))
}

fn open(path: &Path) -> CliResult<BufReader<std::fs::File>> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(BufReader::new(file))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("writing {}: {e}", path.display()))
}

fn line_err(path: &Path, line: usize, message: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{} line {line}: {message}", path.display()))
}

fn parse_f64(path: &Path, line: usize, field: &str) -> CliResult<f64> {
    field
        .parse()
        .map_err(|e| line_err(path, line, format!("bad number '{field}': {e}")))
}

// ── sweep tables ────────────────────────────────────────────────────────────

/// One sweep point. A diverged training run keeps its row with NaN errors
/// and a non-"ok" status so the sweep stays complete.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub x: f64,
    pub mae_hr_bpm: f64,
    pub mae_rr_bpm: f64,
    pub status: String,
}

pub fn write_sweep_csv(path: &Path, x_header: &str, rows: &[SweepRow]) -> CliResult<()> {
    let mut w = create(path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "{x_header},mae_hr_bpm,mae_rr_bpm,status")?;
        for row in rows {
            writeln!(w, "{},{},{},{}", row.x, row.mae_hr_bpm, row.mae_rr_bpm, row.status)?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

pub fn read_sweep_csv(path: &Path, x_header: &str) -> CliResult<Vec<SweepRow>> {
    let reader = open(path)?;
    let expected = format!("{x_header},mae_hr_bpm,mae_rr_bpm,status");
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| line_err(path, line_no, e))?;
        if line_no == 1 {
            if line != expected {
                return Err(line_err(path, 1, format!("expected header '{expected}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(line_err(path, line_no, "expected 4 fields"));
        }
        rows.push(SweepRow {
            x: parse_f64(path, line_no, fields[0])?,
            mae_hr_bpm: parse_f64(path, line_no, fields[1])?,
            mae_rr_bpm: parse_f64(path, line_no, fields[2])?,
            status: fields[3].to_string(),
        });
    }
    if rows.is_empty() {
        return Err(line_err(path, 1, "no sweep rows"));
    }
    Ok(rows)
}

// ── per-window predictions ──────────────────────────────────────────────────

const VITALS_PRED_HEADER: &str = "window,true_hr_bpm,pred_hr_bpm,true_rr_bpm,pred_rr_bpm";
const STAGE_PRED_HEADER: &str = "epoch,true_stage,pred_stage";

pub fn write_vitals_predictions(
    path: &Path,
    truth_heart: &[f64],
    pred_heart: &[f64],
    truth_resp: &[f64],
    pred_resp: &[f64],
) -> CliResult<()> {
    let mut w = create(path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "{VITALS_PRED_HEADER}")?;
        for i in 0..truth_heart.len() {
            writeln!(
                w,
                "{i},{},{},{},{}",
                truth_heart[i], pred_heart[i], truth_resp[i], pred_resp[i]
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

/// Rows come back as (true heart, predicted heart, true resp, predicted resp).
pub fn read_vitals_predictions(path: &Path) -> CliResult<Vec<(f64, f64, f64, f64)>> {
    let reader = open(path)?;
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| line_err(path, line_no, e))?;
        if line_no == 1 {
            if line != VITALS_PRED_HEADER {
                return Err(line_err(path, 1, format!("expected header '{VITALS_PRED_HEADER}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(line_err(path, line_no, "expected 5 fields"));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|e| line_err(path, line_no, format!("bad index: {e}")))?;
        if index != rows.len() {
            return Err(line_err(path, line_no, "window index out of order"));
        }
        rows.push((
            parse_f64(path, line_no, fields[1])?,
            parse_f64(path, line_no, fields[2])?,
            parse_f64(path, line_no, fields[3])?,
            parse_f64(path, line_no, fields[4])?,
        ));
    }
    Ok(rows)
}

pub fn write_stage_predictions(
    path: &Path,
    truth: &[SleepStage],
    pred: &[SleepStage],
) -> CliResult<()> {
    let mut w = create(path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "{STAGE_PRED_HEADER}")?;
        for (i, (t, p)) in truth.iter().zip(pred).enumerate() {
            writeln!(w, "{i},{},{}", t.name(), p.name())?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

pub fn read_stage_predictions(path: &Path) -> CliResult<Vec<(SleepStage, SleepStage)>> {
    let reader = open(path)?;
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| line_err(path, line_no, e))?;
        if line_no == 1 {
            if line != STAGE_PRED_HEADER {
                return Err(line_err(path, 1, format!("expected header '{STAGE_PRED_HEADER}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(line_err(path, line_no, "expected 3 fields"));
        }
        let truth = SleepStage::parse(fields[1]).map_err(|e| line_err(path, line_no, e))?;
        let pred = SleepStage::parse(fields[2]).map_err(|e| line_err(path, line_no, e))?;
        rows.push((truth, pred));
    }
    Ok(rows)
}

// ── error CDF ───────────────────────────────────────────────────────────────

const CDF_HEADER: &str = "vital,abs_error_bpm,cum_fraction";

/// Writes the empirical error distribution, one block per vital, errors
/// ascending with cumulative fraction (i+1)/n.
pub fn write_error_cdf(path: &Path, blocks: &[(&str, &[f64])]) -> CliResult<()> {
    let mut w = create(path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "{CDF_HEADER}")?;
        for (vital, errors) in blocks {
            let n = errors.len();
            for (i, e) in errors.iter().enumerate() {
                writeln!(w, "{vital},{e},{}", (i + 1) as f64 / n as f64)?;
            }
        }
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

pub fn read_error_cdf(path: &Path) -> CliResult<Vec<(String, f64, f64)>> {
    let reader = open(path)?;
    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| line_err(path, line_no, e))?;
        if line_no == 1 {
            if line != CDF_HEADER {
                return Err(line_err(path, 1, format!("expected header '{CDF_HEADER}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(line_err(path, line_no, "expected 3 fields"));
        }
        let error = parse_f64(path, line_no, fields[1])?;
        let fraction = parse_f64(path, line_no, fields[2])?;
        if !(0.0..=1.0).contains(&fraction) {
            return Err(line_err(path, line_no, "cumulative fraction outside [0, 1]"));
        }
        if let Some((last_vital, last_error, _)) = rows.last() {
            if *last_vital == fields[0] && error < *last_error {
                return Err(line_err(path, line_no, "errors must be non-decreasing"));
            }
        }
        rows.push((fields[0].to_string(), error, fraction));
    }
    Ok(rows)
}

// ── confusion matrix ────────────────────────────────────────────────────────

/// Reads the confusion CSV back as `counts[true][pred]`.
pub fn read_confusion_csv(path: &Path) -> CliResult<[[usize; 4]; 4]> {
    let reader = open(path)?;
    let mut counts = [[0usize; 4]; 4];
    let mut filled = 0;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| line_err(path, line_no, e))?;
        if line_no == 1 {
            if line != "true\\pred,WAKE,REM,LIGHT,DEEP" {
                return Err(line_err(path, 1, "bad confusion header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if filled >= 4 {
            return Err(line_err(path, line_no, "more than 4 confusion rows"));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(line_err(path, line_no, "expected 5 fields"));
        }
        let stage = SleepStage::parse(fields[0]).map_err(|e| line_err(path, line_no, e))?;
        if stage.index() != filled {
            return Err(line_err(path, line_no, "confusion rows out of order"));
        }
        for (j, field) in fields[1..].iter().enumerate() {
            counts[filled][j] = field
                .parse()
                .map_err(|e| line_err(path, line_no, format!("bad count '{field}': {e}")))?;
        }
        filled += 1;
    }
    if filled != 4 {
        return Err(line_err(path, 1, format!("expected 4 confusion rows, got {filled}")));
    }
    Ok(counts)
}

// ── training report ─────────────────────────────────────────────────────────

/// Parses a training report CSV into its header fields and numeric rows.
pub fn read_train_report(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let reader = open(path)?;
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| line_err(path, line_no, e))?;
        if line_no == 1 {
            header = line.split(',').map(str::to_string).collect();
            if header.first().map(String::as_str) != Some("epoch") {
                return Err(line_err(path, 1, "first column must be 'epoch'"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(line_err(path, line_no, "field count differs from header"));
        }
        let row: Vec<f64> = fields
            .iter()
            .map(|f| parse_f64(path, line_no, f))
            .collect::<CliResult<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(line_err(path, 1, "no report rows"));
    }
    Ok((header, rows))
}

// ── metrics documents ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateDoc {
    pub mae_bpm: f64,
    pub mape_pct: f64,
    /// Defined as 100 − MAPE.
    pub accuracy_pct: f64,
}

impl From<&RateMetrics> for RateDoc {
    fn from(m: &RateMetrics) -> Self {
        RateDoc { mae_bpm: m.mae, mape_pct: m.mape_pct, accuracy_pct: m.accuracy_pct }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalsMetricsDoc {
    pub model: String,
    pub task: String,
    /// Which windows the numbers describe: "validation" or "evaluation".
    pub split: String,
    pub windows: usize,
    pub heart: RateDoc,
    pub resp: RateDoc,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
}

impl VitalsMetricsDoc {
    pub fn new(model: &str, split: &str, windows: usize, metrics: &VitalsMetrics) -> Self {
        VitalsMetricsDoc {
            model: model.to_string(),
            task: "vitals".into(),
            split: split.to_string(),
            windows,
            heart: RateDoc::from(&metrics.heart),
            resp: RateDoc::from(&metrics.resp),
            final_train_loss: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetricsDoc {
    pub model: String,
    pub task: String,
    pub split: String,
    pub epochs: usize,
    pub overall_accuracy_pct: f64,
    pub macro_recall_pct: f64,
    /// Keyed by stage name; absent classes carry null.
    pub per_class_recall_pct: BTreeMap<String, Option<f64>>,
    /// `confusion[true][pred]` in stage-index order.
    pub confusion: Vec<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
}

impl StageMetricsDoc {
    pub fn new(model: &str, split: &str, epochs: usize, metrics: &StageMetrics) -> Self {
        let mut recalls = BTreeMap::new();
        for stage in SleepStage::ALL {
            recalls.insert(
                stage.name().to_string(),
                metrics.per_class_recall_pct[stage.index()],
            );
        }
        StageMetricsDoc {
            model: model.to_string(),
            task: "stages".into(),
            split: split.to_string(),
            epochs,
            overall_accuracy_pct: metrics.overall_accuracy_pct,
            macro_recall_pct: metrics.macro_recall_pct,
            per_class_recall_pct: recalls,
            confusion: metrics.confusion.iter().map(|row| row.to_vec()).collect(),
            final_train_loss: None,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(doc)
        .map_err(|e| CliError::Input(format!("serializing {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{} line {}: {e}", path.display(), e.line())))
}
