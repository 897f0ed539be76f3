//! ECG ground truth: QRS detection with two moving averages, heart rate
//! from RR intervals, ECG-derived respiration from QRS areas, and the
//! heart-rate-variability series.
//!
//! Detection conditions the trace (normalize, band-pass), squares it, and
//! compares a QRS-scale moving average against a beat-scale one plus an
//! offset; contiguous regions above the offset are candidate beats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{self, ButterworthConfig};
use crate::error::{CoreError, Result};

/// Physiologic RR guard band in seconds.
pub const RR_MIN_S: f64 = 0.24;
pub const RR_MAX_S: f64 = 3.0;
/// Acceptable instantaneous heart-rate range in bpm.
pub const HR_MIN_BPM: f64 = 30.0;
pub const HR_MAX_BPM: f64 = 220.0;
/// Grid rate for the uniform HRV and EDR series.
pub const VITALS_GRID_HZ: f64 = 4.0;

// ── trace ───────────────────────────────────────────────────────────────────

/// Uniformly sampled single-lead ECG in millivolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgTrace {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl EcgTrace {
    pub fn new(sample_rate: f64, samples: Vec<f64>) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(CoreError::Config(format!(
                "ECG sample rate must be positive, got {sample_rate}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::MalformedData(
                "ECG trace contains non-finite samples".into(),
            ));
        }
        Ok(EcgTrace { sample_rate, samples })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Writes `# rate=<Hz>`, an `index,mv` header, then one row per sample.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "# rate={}", self.sample_rate)?;
        writeln!(w, "index,mv")?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(w, "{i},{v}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| CoreError::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut rate: Option<f64> = None;
        let mut samples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("rate=") {
                    let r: f64 = v
                        .trim()
                        .parse()
                        .map_err(|e| parse_err(line_no, format!("bad rate: {e}")))?;
                    rate = Some(r);
                }
                continue;
            }
            if line == "index,mv" {
                continue;
            }
            let (idx_str, mv_str) = line
                .split_once(',')
                .ok_or_else(|| parse_err(line_no, "expected index,mv".into()))?;
            let idx: usize = idx_str
                .trim()
                .parse()
                .map_err(|e| parse_err(line_no, format!("bad index: {e}")))?;
            if idx != samples.len() {
                return Err(parse_err(
                    line_no,
                    format!("index {idx} out of order, expected {}", samples.len()),
                ));
            }
            let mv: f64 = mv_str
                .trim()
                .parse()
                .map_err(|e| parse_err(line_no, format!("bad sample: {e}")))?;
            samples.push(mv);
        }
        let rate = rate.ok_or_else(|| {
            CoreError::MalformedData(format!("{source_name}: missing '# rate=<Hz>' header"))
        })?;
        EcgTrace::new(rate, samples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        Self::read_csv(BufReader::new(File::open(path)?), &name)
    }
}

// ── annotation ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Beat {
    pub onset: usize,
    pub r_peak: usize,
    pub offset: usize,
}

/// Detected beats with block boundaries, ordered and non-overlapping.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QrsAnnotation {
    beats: Vec<Beat>,
}

impl QrsAnnotation {
    pub fn new(beats: Vec<Beat>) -> Result<Self> {
        for b in &beats {
            if !(b.onset < b.r_peak && b.r_peak < b.offset) {
                return Err(CoreError::MalformedData(format!(
                    "beat must satisfy onset < r_peak < offset, got {b:?}"
                )));
            }
        }
        for pair in beats.windows(2) {
            if pair[1].onset <= pair[0].offset {
                return Err(CoreError::MalformedData(format!(
                    "beats overlap or are out of order: {:?} then {:?}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(QrsAnnotation { beats })
    }

    pub fn beats(&self) -> &[Beat] {
        &self.beats
    }

    pub fn is_empty(&self) -> bool {
        self.beats.is_empty()
    }

    pub fn len(&self) -> usize {
        self.beats.len()
    }

    pub fn r_peaks(&self) -> Vec<usize> {
        self.beats.iter().map(|b| b.r_peak).collect()
    }

    /// Writes `r_index,onset,offset` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "r_index,onset,offset")?;
        for b in &self.beats {
            writeln!(w, "{},{},{}", b.r_peak, b.onset, b.offset)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| CoreError::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut beats = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line == "r_index,onset,offset" {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(parse_err(line_no, "expected r_index,onset,offset".into()));
            }
            let parse = |s: &str, what: &str| -> Result<usize> {
                s.trim()
                    .parse()
                    .map_err(|e| parse_err(line_no, format!("bad {what}: {e}")))
            };
            beats.push(Beat {
                r_peak: parse(fields[0], "r_index")?,
                onset: parse(fields[1], "onset")?,
                offset: parse(fields[2], "offset")?,
            });
        }
        QrsAnnotation::new(beats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        Self::read_csv(BufReader::new(File::open(path)?), &name)
    }
}

// ── detection ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrsConfig {
    /// Threshold offset as a fraction of the mean squared signal.
    pub beta: f64,
    /// QRS-scale moving-average window, seconds.
    pub qrs_window_s: f64,
    /// Beat-scale moving-average window, seconds.
    pub beat_window_s: f64,
    /// Band-pass corner frequencies, Hz.
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub band_order: usize,
    /// Peaks closer than this merge, keeping the taller one.
    pub min_rr_s: f64,
}

impl Default for QrsConfig {
    fn default() -> Self {
        QrsConfig {
            beta: 0.08,
            qrs_window_s: 0.097,
            beat_window_s: 0.611,
            band_low_hz: 0.5,
            band_high_hz: 40.0,
            band_order: 3,
            min_rr_s: RR_MIN_S,
        }
    }
}

/// Normalizes and band-passes a trace: the shared conditioning step for
/// detection and EDR.
fn conditioned(trace: &EcgTrace, cfg: &QrsConfig) -> Result<Vec<f64>> {
    let nyquist = trace.sample_rate / 2.0;
    let low = cfg.band_low_hz / nyquist;
    let high = cfg.band_high_hz / nyquist;
    if high >= 1.0 {
        return Err(CoreError::Config(format!(
            "band-pass upper corner {} Hz is not below Nyquist {} Hz",
            cfg.band_high_hz, nyquist
        )));
    }
    let normalized = dsp::normalize(&trace.samples)?;
    let filter = dsp::butterworth_design(&ButterworthConfig::band_pass(cfg.band_order, low, high))?;
    dsp::filter_forward_backward(&normalized, &filter)
}

/// Two-moving-average QRS detector.
///
/// Returns an empty annotation (not an error) when the trace holds no
/// beats, including the degenerate constant trace.
pub fn detect_qrs(trace: &EcgTrace, cfg: &QrsConfig) -> Result<QrsAnnotation> {
    if trace.samples.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::MalformedData(
            "ECG trace contains non-finite samples".into(),
        ));
    }
    if trace.duration_s() < 2.0 {
        return Err(CoreError::InsufficientData {
            required_s: 2.0,
            available_s: trace.duration_s(),
        });
    }
    let q = match conditioned(trace, cfg) {
        Ok(q) => q,
        // A constant trace has zero variance and no beats.
        Err(CoreError::MalformedData(_)) => return Ok(QrsAnnotation::default()),
        Err(e) => return Err(e),
    };
    let rate = trace.sample_rate;
    let w_qrs = ((cfg.qrs_window_s * rate).round() as usize).max(1);
    let w_beat = ((cfg.beat_window_s * rate).round() as usize).max(1);

    let p: Vec<f64> = q.iter().map(|v| v * v).collect();
    let ma_qrs = dsp::moving_average(&p, w_qrs)?;
    let ma_beat = dsp::moving_average(&p, w_beat)?;
    let offset = cfg.beta * p.iter().sum::<f64>() / p.len() as f64;

    let mut beats = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..=p.len() {
        let inside = i < p.len() && ma_qrs[i] > ma_beat[i] + offset;
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                start = None;
                let width = i - s;
                if width < w_qrs {
                    continue;
                }
                let r = (s..i)
                    .max_by(|a, b| q[*a].partial_cmp(&q[*b]).unwrap())
                    .unwrap();
                // A crest on the block edge is not QRS morphology.
                if r == s || r == i - 1 {
                    continue;
                }
                beats.push(Beat { onset: s, r_peak: r, offset: i - 1 });
            }
            _ => {}
        }
    }

    // Merge detections closer than the refractory interval.
    let min_gap = (cfg.min_rr_s * rate).round() as usize;
    let mut merged: Vec<Beat> = Vec::with_capacity(beats.len());
    for b in beats {
        match merged.last() {
            Some(last) if b.r_peak - last.r_peak < min_gap => {
                if q[b.r_peak] > q[last.r_peak] {
                    *merged.last_mut().unwrap() = b;
                }
            }
            _ => merged.push(b),
        }
    }
    QrsAnnotation::new(merged)
}

// ── derived series ──────────────────────────────────────────────────────────

/// Values at irregular (per-beat) timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BeatSeries {
    pub times_s: Vec<f64>,
    pub values: Vec<f64>,
}

impl BeatSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
        }
    }
}

/// Values on a uniform grid whose instants are `k / rate_hz` for integer
/// `k` starting at `start_index`, so independently derived series share a
/// common lattice and can be aligned by index intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries {
    pub rate_hz: f64,
    pub start_index: i64,
    pub values: Vec<f64>,
}

impl UniformSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn start_s(&self) -> f64 {
        self.start_index as f64 / self.rate_hz
    }

    pub fn time_at(&self, i: usize) -> f64 {
        (self.start_index + i as i64) as f64 / self.rate_hz
    }
}

/// Linear interpolation of irregular samples onto the `k / grid_hz`
/// lattice covering their span.
pub fn to_uniform(series: &BeatSeries, grid_hz: f64) -> Result<UniformSeries> {
    if series.len() < 2 {
        return Err(CoreError::MalformedData(format!(
            "uniform resampling needs at least 2 points, got {}",
            series.len()
        )));
    }
    if !(grid_hz > 0.0) {
        return Err(CoreError::Config(format!("grid rate must be positive, got {grid_hz}")));
    }
    for pair in series.times_s.windows(2) {
        if !(pair[1] > pair[0]) {
            return Err(CoreError::MalformedData(
                "beat timestamps must strictly increase".into(),
            ));
        }
    }
    let t0 = series.times_s[0];
    let t1 = series.times_s[series.len() - 1];
    let k0 = (t0 * grid_hz - 1e-9).ceil() as i64;
    let k1 = (t1 * grid_hz + 1e-9).floor() as i64;
    if k1 < k0 {
        return Err(CoreError::MalformedData(format!(
            "span {t0:.3}..{t1:.3} s holds no {grid_hz} Hz grid point"
        )));
    }
    let mut values = Vec::with_capacity((k1 - k0 + 1) as usize);
    let mut seg = 0usize;
    for k in k0..=k1 {
        let t = k as f64 / grid_hz;
        while seg + 2 < series.len() && series.times_s[seg + 1] < t {
            seg += 1;
        }
        let (ta, tb) = (series.times_s[seg], series.times_s[seg + 1]);
        let (va, vb) = (series.values[seg], series.values[seg + 1]);
        let frac = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        values.push(va * (1.0 - frac) + vb * frac);
    }
    Ok(UniformSeries { rate_hz: grid_hz, start_index: k0, values })
}

/// Restricts two same-rate series to their common lattice indices.
pub fn align(a: &UniformSeries, b: &UniformSeries) -> Result<(UniformSeries, UniformSeries)> {
    if (a.rate_hz - b.rate_hz).abs() > 1e-12 {
        return Err(CoreError::Config(format!(
            "cannot align series at {} Hz and {} Hz",
            a.rate_hz, b.rate_hz
        )));
    }
    let lo = a.start_index.max(b.start_index);
    let hi = (a.start_index + a.len() as i64).min(b.start_index + b.len() as i64);
    if hi <= lo {
        return Err(CoreError::MalformedData(
            "series do not overlap in time".into(),
        ));
    }
    let slice = |s: &UniformSeries| UniformSeries {
        rate_hz: s.rate_hz,
        start_index: lo,
        values: s.values[(lo - s.start_index) as usize..(hi - s.start_index) as usize].to_vec(),
    };
    Ok((slice(a), slice(b)))
}

/// Consecutive-peak (time, RR seconds) pairs inside the guard band,
/// timestamped at the second peak.
fn valid_rr_pairs(annotation: &QrsAnnotation, rate: f64) -> Vec<(f64, f64)> {
    let peaks = annotation.r_peaks();
    let mut out = Vec::new();
    for pair in peaks.windows(2) {
        let rr = (pair[1] - pair[0]) as f64 / rate;
        let hr = 60.0 / rr;
        if (RR_MIN_S..=RR_MAX_S).contains(&rr) && (HR_MIN_BPM..=HR_MAX_BPM).contains(&hr) {
            out.push((pair[1] as f64 / rate, rr));
        }
    }
    out
}

/// Instantaneous heart rate, 60/RR, at each valid consecutive peak pair.
/// Fewer than two peaks gives an empty series.
pub fn heart_rate(annotation: &QrsAnnotation, rate: f64) -> Result<BeatSeries> {
    if !(rate > 0.0) {
        return Err(CoreError::Config(format!("sample rate must be positive, got {rate}")));
    }
    let pairs = valid_rr_pairs(annotation, rate);
    let flagged = annotation.len().saturating_sub(1).saturating_sub(pairs.len());
    if flagged > 0 {
        log::debug!("heart_rate: {flagged} RR interval(s) outside the guard band excluded");
    }
    Ok(BeatSeries {
        times_s: pairs.iter().map(|(t, _)| *t).collect(),
        values: pairs.iter().map(|(_, rr)| 60.0 / rr).collect(),
    })
}

/// Per-beat respiration proxy: mean of the conditioned signal over each
/// beat's onset..offset block, timestamped at the R peak.
pub fn edr(trace: &EcgTrace, annotation: &QrsAnnotation, cfg: &QrsConfig) -> Result<BeatSeries> {
    if annotation.is_empty() {
        return Err(CoreError::MalformedData(
            "EDR needs a non-empty annotation".into(),
        ));
    }
    let q = conditioned(trace, cfg)?;
    let mut out = BeatSeries::default();
    for b in annotation.beats() {
        if b.offset <= b.onset {
            log::warn!("skipping zero-width beat at sample {}", b.r_peak);
            continue;
        }
        if b.offset >= q.len() {
            return Err(CoreError::Range(format!(
                "beat offset {} past trace end {}",
                b.offset,
                q.len()
            )));
        }
        let width = (b.offset - b.onset + 1) as f64;
        let area: f64 = q[b.onset..=b.offset].iter().sum();
        out.times_s.push(b.r_peak as f64 / trace.sample_rate);
        out.values.push(area / width);
    }
    Ok(out)
}

/// EDR interpolated onto the uniform vitals grid.
pub fn edr_uniform(trace: &EcgTrace, annotation: &QrsAnnotation, cfg: &QrsConfig) -> Result<UniformSeries> {
    to_uniform(&edr(trace, annotation, cfg)?, VITALS_GRID_HZ)
}

/// RR intervals interpolated onto the uniform vitals grid, mean removed.
/// Needs at least 3 valid beats (2 RR intervals).
pub fn hrv(annotation: &QrsAnnotation, rate: f64) -> Result<UniformSeries> {
    if !(rate > 0.0) {
        return Err(CoreError::Config(format!("sample rate must be positive, got {rate}")));
    }
    let pairs = valid_rr_pairs(annotation, rate);
    if pairs.len() < 2 {
        return Err(CoreError::MalformedData(format!(
            "HRV needs at least 3 valid beats, got {} RR interval(s)",
            pairs.len()
        )));
    }
    let beats = BeatSeries {
        times_s: pairs.iter().map(|(t, _)| *t).collect(),
        values: pairs.iter().map(|(_, rr)| *rr).collect(),
    };
    let mut uniform = to_uniform(&beats, VITALS_GRID_HZ)?;
    let mean = uniform.values.iter().sum::<f64>() / uniform.len() as f64;
    for v in &mut uniform.values {
        *v -= mean;
    }
    Ok(uniform)
}
