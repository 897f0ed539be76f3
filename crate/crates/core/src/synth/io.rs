//! On-disk formats for generated scenarios: per-epoch label CSVs and a JSON
//! manifest tying a recording, its ECG, and its labels together.

use super::Environment;
use crate::error::{CoreError, Result};
use crate::models::SleepStage;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

const LABELS_HEADER: &str = "epoch_index,stage";

pub fn write_labels_csv(path: &Path, labels: &[SleepStage]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{LABELS_HEADER}")?;
    for (i, stage) in labels.iter().enumerate() {
        writeln!(file, "{i},{}", stage.name())?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<SleepStage>> {
    let name = path.display().to_string();
    let parse_err = |line: usize, message: String| CoreError::Parse {
        source_name: name.clone(),
        line,
        message,
    };
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header.trim() == LABELS_HEADER => {}
        Some((_, Ok(header))) => {
            return Err(parse_err(1, format!("expected header '{LABELS_HEADER}', got '{header}'")))
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(parse_err(1, "empty file".into())),
    }
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let (index_text, stage_text) = line
            .split_once(',')
            .ok_or_else(|| parse_err(line_no, format!("expected 'index,stage', got '{line}'")))?;
        let index: usize = index_text
            .trim()
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad epoch index '{index_text}': {e}")))?;
        if index != labels.len() {
            return Err(parse_err(
                line_no,
                format!("epoch index {index} out of order, expected {}", labels.len()),
            ));
        }
        let stage = SleepStage::parse(stage_text).map_err(|e| parse_err(line_no, e.to_string()))?;
        labels.push(stage);
    }
    if labels.is_empty() {
        return Err(parse_err(1, "no label rows".into()));
    }
    Ok(labels)
}

/// Exact rates behind a generated recording.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TruthRates {
    pub resp_hz: f64,
    pub heart_hz: f64,
    pub mean_resp_bpm: f64,
    pub mean_heart_bpm: f64,
}

/// Describes one generated scenario and the files that belong to it. Paths
/// are relative to the manifest's own directory. A noise-free scenario
/// stores `snr_db: null` because JSON has no infinity.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScenarioManifest {
    /// "vitals" for constant-profile recordings, "night" for full nights.
    pub kind: String,
    pub seed: u64,
    pub environment: Environment,
    pub csi_file: String,
    pub csi_rate: f64,
    pub duration_s: f64,
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecg_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecg_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthRates>,
}

/// `None` in a manifest means the noise stage was disabled entirely.
pub fn snr_to_manifest(snr_db: f64) -> Option<f64> {
    if snr_db == f64::INFINITY {
        None
    } else {
        Some(snr_db)
    }
}

pub fn snr_from_manifest(snr_db: Option<f64>) -> f64 {
    snr_db.unwrap_or(f64::INFINITY)
}

impl ScenarioManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::Config(format!("manifest serialization failed: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CoreError::Parse {
            source_name: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}
