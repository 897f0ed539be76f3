//! CSI recordings and their conversion into the two-channel feature
//! matrix the networks consume.
//!
//! A recording is a uniformly sampled stream of complex subcarrier values
//! across receive antennas. Channel 0 of the feature matrix is the
//! filtered amplitude of the first antenna; channel 1 is the filtered
//! phase difference between the first two antennas, which cancels the
//! random phase offset common to both.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use wisp_nn::Tensor;

use crate::dsp::{self, ButterworthConfig, HampelConfig};
use crate::error::{CoreError, Result};

/// Anti-aliasing low-pass order used by [`resample`].
pub const ANTIALIAS_ORDER: usize = 8;
/// Anti-aliasing cutoff as a fraction of the target Nyquist frequency.
pub const ANTIALIAS_CUTOFF: f64 = 0.45;

// ── recording ───────────────────────────────────────────────────────────────

/// Timestamped complex subcarrier frames across receive antennas.
///
/// Values are stored flat, frame-major then antenna-major:
/// `(frame * num_rx + rx) * num_subcarriers + subcarrier`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiRecording {
    sample_rate: f64,
    num_rx: usize,
    num_subcarriers: usize,
    timestamps: Vec<f64>,
    values: Vec<Complex64>,
}

impl CsiRecording {
    pub fn new(
        sample_rate: f64,
        num_rx: usize,
        num_subcarriers: usize,
        timestamps: Vec<f64>,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(CoreError::Config(format!(
                "sample rate must be a positive real, got {sample_rate}"
            )));
        }
        if num_rx < 2 {
            return Err(CoreError::Config(format!(
                "need at least 2 receive antennas for phase differencing, got {num_rx}"
            )));
        }
        if num_subcarriers == 0 {
            return Err(CoreError::Config("need at least 1 subcarrier".into()));
        }
        if values.len() != timestamps.len() * num_rx * num_subcarriers {
            return Err(CoreError::MalformedData(format!(
                "{} frames x {num_rx} antennas x {num_subcarriers} subcarriers needs {} values, got {}",
                timestamps.len(),
                timestamps.len() * num_rx * num_subcarriers,
                values.len()
            )));
        }
        for pair in timestamps.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(CoreError::MalformedData(format!(
                    "timestamps must strictly increase, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(CsiRecording { sample_rate, num_rx, num_subcarriers, timestamps, values })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn num_rx(&self) -> usize {
        self.num_rx
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn num_frames(&self) -> usize {
        self.timestamps.len()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    /// Covered duration in seconds, counting one sample period per frame.
    pub fn duration_s(&self) -> f64 {
        self.timestamps.len() as f64 / self.sample_rate
    }

    pub fn value(&self, frame: usize, rx: usize, subcarrier: usize) -> Complex64 {
        self.values[(frame * self.num_rx + rx) * self.num_subcarriers + subcarrier]
    }

    /// Amplitude time series of one antenna/subcarrier pair.
    pub fn amplitude_series(&self, rx: usize, subcarrier: usize) -> Result<Vec<f64>> {
        self.check_rx(rx)?;
        self.check_subcarrier(subcarrier)?;
        Ok((0..self.num_frames())
            .map(|f| self.value(f, rx, subcarrier).norm())
            .collect())
    }

    fn check_rx(&self, rx: usize) -> Result<()> {
        if rx >= self.num_rx {
            return Err(CoreError::Range(format!(
                "antenna index {rx} out of range (recording has {})",
                self.num_rx
            )));
        }
        Ok(())
    }

    fn check_subcarrier(&self, sc: usize) -> Result<()> {
        if sc >= self.num_subcarriers {
            return Err(CoreError::Range(format!(
                "subcarrier index {sc} out of range (recording has {})",
                self.num_subcarriers
            )));
        }
        Ok(())
    }
}

// ── polar decomposition ─────────────────────────────────────────────────────

/// Splits a complex value into (modulus, principal argument).
///
/// The phase lies in (-pi, pi]; zero input maps to (0, 0).
pub fn decompose(value: Complex64) -> Result<(f64, f64)> {
    if !value.re.is_finite() || !value.im.is_finite() {
        return Err(CoreError::MalformedData(format!(
            "non-finite complex sample {value}"
        )));
    }
    let amplitude = value.norm();
    if amplitude == 0.0 {
        return Ok((0.0, 0.0));
    }
    let mut phase = value.im.atan2(value.re);
    if phase <= -std::f64::consts::PI {
        phase += 2.0 * std::f64::consts::PI;
    }
    Ok((amplitude, phase))
}

/// Wraps an angle to the principal interval (-pi, pi].
pub fn wrap_phase(mut x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    while x > std::f64::consts::PI {
        x -= two_pi;
    }
    while x <= -std::f64::consts::PI {
        x += two_pi;
    }
    x
}

/// Per-subcarrier phase-difference series between two antennas, wrapped to
/// (-pi, pi]. Returns one series per subcarrier.
pub fn phase_difference(
    recording: &CsiRecording,
    rx_a: usize,
    rx_b: usize,
) -> Result<Vec<Vec<f64>>> {
    recording.check_rx(rx_a)?;
    recording.check_rx(rx_b)?;
    if rx_a == rx_b {
        return Err(CoreError::Range(format!(
            "phase difference needs two distinct antennas, got {rx_a} twice"
        )));
    }
    let m = recording.num_subcarriers();
    let n = recording.num_frames();
    let mut out = vec![Vec::with_capacity(n); m];
    for f in 0..n {
        for (sc, series) in out.iter_mut().enumerate() {
            let (_, pa) = decompose(recording.value(f, rx_a, sc))?;
            let (_, pb) = decompose(recording.value(f, rx_b, sc))?;
            series.push(wrap_phase(pa - pb));
        }
    }
    Ok(out)
}

// ── resampling ──────────────────────────────────────────────────────────────

/// Interpolates onto `count` instants `k / target_rate`, holding the
/// boundary value for instants past the final source sample (can happen
/// only when upsampling, by less than one source period).
fn interp_to_grid(series: &[f64], source_rate: f64, target_rate: f64, count: usize) -> Vec<f64> {
    let n = series.len();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let pos = k as f64 * source_rate / target_rate;
        let i = pos.floor() as usize;
        if i + 1 >= n {
            out.push(series[n - 1]);
        } else {
            let frac = pos - i as f64;
            out.push(series[i] * (1.0 - frac) + series[i + 1] * frac);
        }
    }
    out
}

/// Changes the sampling rate of a uniform series, covering the same time
/// span. Downsampling applies an anti-aliasing low-pass (order 8, cutoff
/// 0.45 of the target Nyquist) before interpolation; upsampling is plain
/// linear interpolation.
pub fn resample(series: &[f64], source_rate: f64, target_rate: f64) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(CoreError::MalformedData(format!(
            "resample needs at least 2 samples, got {}",
            series.len()
        )));
    }
    if !(source_rate > 0.0) || !(target_rate > 0.0) {
        return Err(CoreError::Config(format!(
            "sampling rates must be positive, got {source_rate} -> {target_rate}"
        )));
    }
    if (source_rate - target_rate).abs() < 1e-12 * source_rate {
        return Ok(series.to_vec());
    }
    let span = (series.len() - 1) as f64 / source_rate;
    let count = (span * target_rate + 1e-9).floor() as usize + 1;
    resample_to_count(series, source_rate, target_rate, count)
}

/// Resampling core shared with the feature-matrix builder, which needs a
/// caller-fixed output length instead of a span-derived one.
pub(crate) fn resample_to_count(
    series: &[f64],
    source_rate: f64,
    target_rate: f64,
    count: usize,
) -> Result<Vec<f64>> {
    if target_rate < source_rate {
        let cutoff = ANTIALIAS_CUTOFF * target_rate / source_rate;
        let filter = dsp::butterworth_design(&ButterworthConfig::low_pass(ANTIALIAS_ORDER, cutoff))?;
        let filtered = dsp::filter_forward_backward(series, &filter)?;
        Ok(interp_to_grid(&filtered, source_rate, target_rate, count))
    } else {
        Ok(interp_to_grid(series, source_rate, target_rate, count))
    }
}

// ── feature matrix ──────────────────────────────────────────────────────────

/// Filtering chain parameters for [`build_feature_matrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Outlier filter used on both channels (and a second time on phase).
    pub hampel: HampelConfig,
    /// Low-pass order for the vitals band.
    pub low_pass_order: usize,
    /// Low-pass cutoff as a fraction of the target-rate Nyquist.
    pub low_pass_cutoff: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            hampel: HampelConfig::default(),
            low_pass_order: 4,
            low_pass_cutoff: 0.2,
        }
    }
}

/// The network input Q: `duration * rate` rows by `m` subcarriers by 2
/// channels (filtered amplitude, filtered phase difference).
#[derive(Debug, Clone, PartialEq)]
pub struct CsiFeatureMatrix {
    pub data: Tensor,
    pub sample_rate: f64,
    pub duration_s: f64,
}

impl CsiFeatureMatrix {
    pub fn rows(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn subcarriers(&self) -> usize {
        self.data.shape()[1]
    }
}

fn design_vitals_filter(cfg: &FilterConfig, native_rate: f64, f_s: f64) -> Result<Option<dsp::IirFilter>> {
    let cutoff = cfg.low_pass_cutoff * f_s / native_rate;
    if cutoff >= 1.0 {
        // Target band reaches past the native Nyquist; nothing to remove.
        log::debug!("skipping vitals low-pass: cutoff {cutoff:.3} of native Nyquist is out of range");
        return Ok(None);
    }
    Ok(Some(dsp::butterworth_design(&ButterworthConfig::low_pass(
        cfg.low_pass_order,
        cutoff,
    ))?))
}

fn apply_optional(series: Vec<f64>, filter: &Option<dsp::IirFilter>) -> Result<Vec<f64>> {
    match filter {
        Some(f) => dsp::filter_forward_backward(&series, f),
        None => Ok(series),
    }
}

/// Hampel-cleaned native-rate series for one recording: the prefix of
/// feature extraction that does not depend on the output rate or duration.
///
/// Sweeps over rates and durations reuse one conditioned recording instead
/// of repeating the outlier filtering, which dominates preprocessing cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedRecording {
    native_rate: f64,
    duration_s: f64,
    hampel: HampelConfig,
    /// Cleaned amplitude of the first antenna, one series per subcarrier.
    amplitude: Vec<Vec<f64>>,
    /// Phase difference of the first two antennas after the first Hampel
    /// pass; the second pass runs after the rate-dependent low-pass.
    phase: Vec<Vec<f64>>,
}

impl ConditionedRecording {
    pub fn native_rate(&self) -> f64 {
        self.native_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }
}

/// Runs the rate-independent cleaning stage over a whole recording.
pub fn condition_recording(
    recording: &CsiRecording,
    hampel_cfg: &HampelConfig,
) -> Result<ConditionedRecording> {
    if recording.num_rx() > 2 {
        log::info!(
            "recording has {} antennas; using the first two",
            recording.num_rx()
        );
    }
    let m = recording.num_subcarriers();
    let phase_series = phase_difference(recording, 0, 1)?;
    let mut amplitude = Vec::with_capacity(m);
    let mut phase = Vec::with_capacity(m);
    for sc in 0..m {
        amplitude.push(dsp::hampel(&recording.amplitude_series(0, sc)?, hampel_cfg)?);
        phase.push(dsp::hampel(&phase_series[sc], hampel_cfg)?);
    }
    Ok(ConditionedRecording {
        native_rate: recording.sample_rate(),
        duration_s: recording.duration_s(),
        hampel: hampel_cfg.clone(),
        amplitude,
        phase,
    })
}

/// Finishes feature extraction from a conditioned recording: low-pass at
/// the native rate, a second phase Hampel pass, resample to `f_s`, clamp.
pub fn features_from_conditioned(
    conditioned: &ConditionedRecording,
    t_seconds: f64,
    f_s: f64,
    cfg: &FilterConfig,
) -> Result<CsiFeatureMatrix> {
    if cfg.hampel != conditioned.hampel {
        return Err(CoreError::Config(
            "conditioned recording was cleaned with a different hampel config".into(),
        ));
    }
    if !(t_seconds > 0.0) || !(f_s > 0.0) {
        return Err(CoreError::Config(format!(
            "duration and rate must be positive, got t={t_seconds}, f_s={f_s}"
        )));
    }
    let rows_f = t_seconds * f_s;
    let rows = rows_f.round();
    if (rows_f - rows).abs() > 1e-9 || rows < 1.0 {
        return Err(CoreError::Config(format!(
            "duration x rate must be a whole number of samples, got {t_seconds} x {f_s} = {rows_f}"
        )));
    }
    let rows = rows as usize;
    if conditioned.duration_s + 1e-9 < t_seconds {
        return Err(CoreError::InsufficientData {
            required_s: t_seconds,
            available_s: conditioned.duration_s,
        });
    }

    let native = conditioned.native_rate;
    let vitals_filter = design_vitals_filter(cfg, native, f_s)?;
    let m = conditioned.amplitude.len();

    let mut tensor = Tensor::zeros(&[rows, m, 2]);
    for sc in 0..m {
        let amp = apply_optional(conditioned.amplitude[sc].clone(), &vitals_filter)?;
        let amp = resample_to_count(&amp, native, f_s, rows)?;

        let ph = apply_optional(conditioned.phase[sc].clone(), &vitals_filter)?;
        let ph = dsp::hampel(&ph, &cfg.hampel)?;
        let ph = resample_to_count(&ph, native, f_s, rows)?;

        let data = tensor.data_mut();
        for r in 0..rows {
            data[(r * m + sc) * 2] = amp[r].max(0.0);
            data[(r * m + sc) * 2 + 1] = ph[r];
        }
    }
    if !tensor.all_finite() {
        return Err(CoreError::Numeric(
            "feature matrix contains non-finite values".into(),
        ));
    }
    Ok(CsiFeatureMatrix { data: tensor, sample_rate: f_s, duration_s: t_seconds })
}

/// Builds the feature matrix for the first `t_seconds` of a recording at
/// output rate `f_s`.
///
/// Channel 0: per-subcarrier amplitude of the first antenna, Hampel then
/// low-pass filtered, resampled, clamped at zero. Channel 1: phase
/// difference of the first two antennas, Hampel, low-pass, Hampel again,
/// then resampled. All filtering runs at the native rate; resampling to
/// `f_s` happens last.
pub fn build_feature_matrix(
    recording: &CsiRecording,
    t_seconds: f64,
    f_s: f64,
    cfg: &FilterConfig,
) -> Result<CsiFeatureMatrix> {
    if !(t_seconds > 0.0) || !(f_s > 0.0) {
        return Err(CoreError::Config(format!(
            "duration and rate must be positive, got t={t_seconds}, f_s={f_s}"
        )));
    }
    let available = recording.duration_s();
    if available + 1e-9 < t_seconds {
        return Err(CoreError::InsufficientData {
            required_s: t_seconds,
            available_s: available,
        });
    }
    let conditioned = condition_recording(recording, &cfg.hampel)?;
    features_from_conditioned(&conditioned, t_seconds, f_s, cfg)
}

// ── file format ─────────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct FrameLine {
    t: f64,
    rx: Vec<Vec<[f64; 2]>>,
}

impl CsiRecording {
    /// Writes one JSON object per line: `{"t": seconds, "rx": [[[re, im],
    /// ...]; per antenna]}`.
    pub fn write_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for f in 0..self.num_frames() {
            let rx: Vec<Vec<[f64; 2]>> = (0..self.num_rx)
                .map(|a| {
                    (0..self.num_subcarriers)
                        .map(|s| {
                            let v = self.value(f, a, s);
                            [v.re, v.im]
                        })
                        .collect()
                })
                .collect();
            let line = FrameLine { t: self.timestamps[f], rx };
            serde_json::to_writer(&mut w, &line)
                .map_err(|e| CoreError::MalformedData(format!("serializing frame {f}: {e}")))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the JSON-lines format. The sample rate is inferred from the
    /// timestamp span and snapped to the nearest integer when within 1e-9
    /// relative (rates are whole numbers in every producer here).
    pub fn read_jsonl<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| CoreError::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut timestamps = Vec::new();
        let mut values = Vec::new();
        let mut shape: Option<(usize, usize)> = None;
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let frame: FrameLine = serde_json::from_str(&line)
                .map_err(|e| parse_err(line_no, e.to_string()))?;
            let n_rx = frame.rx.len();
            let m = frame.rx.first().map_or(0, Vec::len);
            if frame.rx.iter().any(|a| a.len() != m) {
                return Err(parse_err(line_no, "antennas disagree on subcarrier count".into()));
            }
            match shape {
                None => {
                    if n_rx < 2 || m == 0 {
                        return Err(parse_err(
                            line_no,
                            format!("need >= 2 antennas and >= 1 subcarrier, got {n_rx} x {m}"),
                        ));
                    }
                    shape = Some((n_rx, m));
                }
                Some(s) if s != (n_rx, m) => {
                    return Err(parse_err(
                        line_no,
                        format!("frame arity {n_rx} x {m} differs from first frame {} x {}", s.0, s.1),
                    ));
                }
                _ => {}
            }
            timestamps.push(frame.t);
            for antenna in &frame.rx {
                values.extend(antenna.iter().map(|[re, im]| Complex64::new(*re, *im)));
            }
        }
        if timestamps.len() < 2 {
            return Err(CoreError::MalformedData(format!(
                "{source_name}: need at least 2 frames to infer a sample rate, got {}",
                timestamps.len()
            )));
        }
        let span = timestamps[timestamps.len() - 1] - timestamps[0];
        if !(span > 0.0) {
            return Err(CoreError::MalformedData(format!(
                "{source_name}: timestamps do not increase"
            )));
        }
        let raw_rate = (timestamps.len() - 1) as f64 / span;
        let snapped = raw_rate.round();
        let rate = if snapped >= 1.0 && (raw_rate - snapped).abs() <= 1e-9 * raw_rate.max(1.0) {
            snapped
        } else {
            raw_rate
        };
        let (n_rx, m) = shape.unwrap();
        CsiRecording::new(rate, n_rx, m, timestamps, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_jsonl(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let file = File::open(path)?;
        Self::read_jsonl(BufReader::new(file), &name)
    }
}

impl CsiFeatureMatrix {
    /// Writes `# rate=<Hz> duration=<s>`, a header naming the amplitude
    /// columns `a<k>` and phase columns `p<k>`, then one row per time step.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "# rate={} duration={}", self.sample_rate, self.duration_s)?;
        let m = self.subcarriers();
        write!(w, "row")?;
        for k in 0..m {
            write!(w, ",a{k}")?;
        }
        for k in 0..m {
            write!(w, ",p{k}")?;
        }
        writeln!(w)?;
        let values = self.data.data();
        for r in 0..self.rows() {
            write!(w, "{r}")?;
            for ch in 0..2 {
                for k in 0..m {
                    write!(w, ",{}", values[(r * m + k) * 2 + ch])?;
                }
            }
            writeln!(w)?;
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
        let mut lines = reader.lines().enumerate();

        let (_, meta) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?;
        let meta = meta?;
        let mut sample_rate = None;
        let mut duration_s = None;
        let body = meta
            .strip_prefix('#')
            .ok_or_else(|| parse_err(1, "expected '# rate=<Hz> duration=<s>'".into()))?;
        for token in body.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| parse_err(1, format!("bad metadata token '{token}'")))?;
            let parsed: f64 = value
                .parse()
                .map_err(|e| parse_err(1, format!("bad {key}: {e}")))?;
            match key {
                "rate" => sample_rate = Some(parsed),
                "duration" => duration_s = Some(parsed),
                _ => return Err(parse_err(1, format!("unknown metadata key '{key}'"))),
            }
        }
        let sample_rate = sample_rate.ok_or_else(|| parse_err(1, "missing rate".into()))?;
        let duration_s = duration_s.ok_or_else(|| parse_err(1, "missing duration".into()))?;
        if !(sample_rate > 0.0) || !(duration_s > 0.0) {
            return Err(parse_err(1, "rate and duration must be positive".into()));
        }

        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(2, "missing column header".into()))?;
        let header = header?;
        let columns: Vec<&str> = header.split(',').collect();
        if columns.len() < 3 || columns.len() % 2 == 0 || columns[0] != "row" {
            return Err(parse_err(2, format!("bad column header '{header}'")));
        }
        let m = (columns.len() - 1) / 2;
        for k in 0..m {
            if columns[1 + k] != format!("a{k}") || columns[1 + m + k] != format!("p{k}") {
                return Err(parse_err(2, format!("bad column header '{header}'")));
            }
        }

        let mut values = Vec::new();
        let mut rows = 0usize;
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let index: usize = fields
                .next()
                .unwrap_or("")
                .parse()
                .map_err(|e| parse_err(line_no, format!("bad row index: {e}")))?;
            if index != rows {
                return Err(parse_err(
                    line_no,
                    format!("row index {index} out of order, expected {rows}"),
                ));
            }
            let row: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| parse_err(line_no, format!("bad value '{f}': {e}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != 2 * m {
                return Err(parse_err(
                    line_no,
                    format!("expected {} values, got {}", 2 * m, row.len()),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(line_no, "non-finite value".into()));
            }
            let base = values.len();
            values.resize(base + 2 * m, 0.0);
            for k in 0..m {
                values[base + 2 * k] = row[k];
                values[base + 2 * k + 1] = row[m + k];
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(parse_err(3, "no data rows".into()));
        }
        if (duration_s * sample_rate).round() as usize != rows {
            return Err(CoreError::MalformedData(format!(
                "{source_name}: {rows} rows disagree with rate {sample_rate} x duration {duration_s}"
            )));
        }
        Ok(CsiFeatureMatrix {
            data: Tensor::from_vec(&[rows, m, 2], values)?,
            sample_rate,
            duration_s,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        Self::read_csv(BufReader::new(File::open(path)?), &name)
    }
}

impl CsiRecording {
    /// Convenience constructor for tests and generators: timestamps at
    /// `k / rate`, values supplied frame-major.
    pub fn from_values(
        sample_rate: f64,
        num_rx: usize,
        num_subcarriers: usize,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        let per_frame = num_rx * num_subcarriers;
        if per_frame == 0 || values.len() % per_frame != 0 {
            return Err(CoreError::MalformedData(format!(
                "value count {} is not a multiple of {num_rx} x {num_subcarriers}",
                values.len()
            )));
        }
        let frames = values.len() / per_frame;
        let timestamps = (0..frames).map(|k| k as f64 / sample_rate).collect();
        CsiRecording::new(sample_rate, num_rx, num_subcarriers, timestamps, values)
    }
}
