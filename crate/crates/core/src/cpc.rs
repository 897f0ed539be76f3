//! Cardiopulmonary coupling: the time-frequency coherence of the HRV and
//! EDR series.
//!
//! Each analysis window is split into Welch sub-segments; every
//! sub-segment is detrended, Hann-tapered and transformed, and the
//! cross- and auto-spectra are averaged across sub-segments so coherence
//! is meaningful (a single segment would give coherence 1 identically).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::ecg::{self, UniformSeries};
use crate::error::{CoreError, Result};

// ── configuration ───────────────────────────────────────────────────────────

/// How map values combine coherence and cross-power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpcWeighting {
    /// Coherence times the cross-power magnitude (coupling strength).
    CrossPower,
    /// Plain coherence in [0, 1].
    Coherence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpcConfig {
    /// Analysis window length in grid samples.
    pub window_len: usize,
    /// Overlap between consecutive windows, in samples.
    pub overlap: usize,
    /// Welch sub-segments per window; must divide `window_len`.
    pub sub_segments: usize,
    pub weighting: CpcWeighting,
}

impl Default for CpcConfig {
    /// 128 s windows at the 4 Hz vitals grid with 75% overlap.
    fn default() -> Self {
        CpcConfig { window_len: 512, overlap: 384, sub_segments: 4, weighting: CpcWeighting::CrossPower }
    }
}

impl CpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sub_segments < 4 {
            return Err(CoreError::Config(format!(
                "need at least 4 sub-segments for a meaningful coherence, got {}",
                self.sub_segments
            )));
        }
        if self.window_len == 0 || self.window_len % self.sub_segments != 0 {
            return Err(CoreError::Config(format!(
                "window length {} must be a positive multiple of {} sub-segments",
                self.window_len, self.sub_segments
            )));
        }
        if self.overlap >= self.window_len {
            return Err(CoreError::Config(format!(
                "overlap {} must be smaller than the window {}",
                self.overlap, self.window_len
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> usize {
        self.window_len - self.overlap
    }

    pub fn sub_len(&self) -> usize {
        self.window_len / self.sub_segments
    }
}

// ── windowed transform ──────────────────────────────────────────────────────

/// Removes the segment mean and applies a periodic Hann taper.
pub fn detrend_and_taper(segment: &[f64]) -> Vec<f64> {
    let n = segment.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = segment.iter().sum::<f64>() / n as f64;
    segment
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos());
            (v - mean) * w
        })
        .collect()
}

fn transform_with(fft: &Arc<dyn Fft<f64>>, tapered: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = tapered.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft.process(&mut buf);
    buf
}

/// Full discrete spectrum of one detrended, tapered segment. Exposed so
/// the transform can be checked directly (energy conservation).
pub fn windowed_spectrum(segment: &[f64]) -> Vec<Complex64> {
    let fft = FftPlanner::new().plan_fft_forward(segment.len());
    transform_with(&fft, &detrend_and_taper(segment))
}

// ── spectra ─────────────────────────────────────────────────────────────────

/// Sub-segment-averaged spectra per analysis window, one-sided
/// (bins 0..=L/2 of the sub-segment transform).
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSpectrogram {
    /// Window centers, seconds.
    pub epochs_s: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    /// Averaged X·conj(Y) per (window, bin).
    pub cross: Vec<Vec<Complex64>>,
    /// Averaged |X|² and |Y|².
    pub auto_x: Vec<Vec<f64>>,
    pub auto_y: Vec<Vec<f64>>,
}

/// Welch-style cross-spectrogram of two series sharing one lattice.
pub fn cross_spectrogram(
    x: &UniformSeries,
    y: &UniformSeries,
    cfg: &CpcConfig,
) -> Result<CrossSpectrogram> {
    cfg.validate()?;
    if x.len() != y.len() || x.start_index != y.start_index || (x.rate_hz - y.rate_hz).abs() > 1e-12 {
        return Err(CoreError::Config(
            "cross-spectrogram inputs must share length, start and rate (align them first)".into(),
        ));
    }
    let n = x.len();
    if n < cfg.window_len {
        return Err(CoreError::InsufficientData {
            required_s: cfg.window_len as f64 / x.rate_hz,
            available_s: n as f64 / x.rate_hz,
        });
    }
    let sub = cfg.sub_len();
    let bins = sub / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(sub);
    let freqs_hz: Vec<f64> = (0..bins).map(|k| k as f64 * x.rate_hz / sub as f64).collect();

    let mut out = CrossSpectrogram {
        epochs_s: Vec::new(),
        freqs_hz,
        cross: Vec::new(),
        auto_x: Vec::new(),
        auto_y: Vec::new(),
    };
    let mut start = 0usize;
    while start + cfg.window_len <= n {
        let mut sxy = vec![Complex64::new(0.0, 0.0); bins];
        let mut sxx = vec![0.0; bins];
        let mut syy = vec![0.0; bins];
        for s in 0..cfg.sub_segments {
            let lo = start + s * sub;
            let xs = transform_with(&fft, &detrend_and_taper(&x.values[lo..lo + sub]));
            let ys = transform_with(&fft, &detrend_and_taper(&y.values[lo..lo + sub]));
            for k in 0..bins {
                sxy[k] += xs[k] * ys[k].conj();
                sxx[k] += xs[k].norm_sqr();
                syy[k] += ys[k].norm_sqr();
            }
        }
        let scale = 1.0 / cfg.sub_segments as f64;
        for k in 0..bins {
            sxy[k] *= scale;
            sxx[k] *= scale;
            syy[k] *= scale;
        }
        let center = (x.start_index + start as i64) as f64 / x.rate_hz
            + (cfg.window_len - 1) as f64 / (2.0 * x.rate_hz);
        out.epochs_s.push(center);
        out.cross.push(sxy);
        out.auto_x.push(sxx);
        out.auto_y.push(syy);
        start += cfg.step();
    }
    Ok(out)
}

/// Magnitude-squared coherence per bin, clipped to [0, 1]. Bins without
/// auto-power get coherence 0.
pub fn coherence(
    cross: &[Vec<Complex64>],
    auto_x: &[Vec<f64>],
    auto_y: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if cross.len() != auto_x.len() || cross.len() != auto_y.len() {
        return Err(CoreError::Config("spectra row counts differ".into()));
    }
    let mut out = Vec::with_capacity(cross.len());
    for ((sxy_row, sxx_row), syy_row) in cross.iter().zip(auto_x).zip(auto_y) {
        if sxy_row.len() != sxx_row.len() || sxy_row.len() != syy_row.len() {
            return Err(CoreError::Config("spectra bin counts differ".into()));
        }
        let row: Vec<f64> = sxy_row
            .iter()
            .zip(sxx_row)
            .zip(syy_row)
            .map(|((sxy, sxx), syy)| {
                if *sxx <= 0.0 || *syy <= 0.0 {
                    0.0
                } else {
                    (sxy.norm_sqr() / (sxx * syy)).clamp(0.0, 1.0)
                }
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

// ── the map ─────────────────────────────────────────────────────────────────

/// Time-frequency coupling map; `values[epoch][freq]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpcMap {
    pub epochs_s: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl CpcMap {
    pub fn num_epochs(&self) -> usize {
        self.epochs_s.len()
    }

    pub fn num_freqs(&self) -> usize {
        self.freqs_hz.len()
    }

    /// First row lists the frequency axis; each following row is an epoch
    /// timestamp and its values.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        write!(w, "epoch_s/freq_hz")?;
        for f in &self.freqs_hz {
            write!(w, ",{f}")?;
        }
        writeln!(w)?;
        for (e, row) in self.epochs_s.iter().zip(&self.values) {
            write!(w, "{e}")?;
            for v in row {
                write!(w, ",{v}")?;
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
        let (_, header) = lines
            .next()
            .ok_or_else(|| CoreError::MalformedData(format!("{source_name}: empty map file")))?;
        let header = header?;
        let mut freqs_hz = Vec::new();
        for (i, field) in header.split(',').enumerate() {
            if i == 0 {
                continue;
            }
            freqs_hz.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(1, format!("bad frequency: {e}")))?,
            );
        }
        let mut epochs_s = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let epoch: f64 = fields
                .next()
                .unwrap()
                .trim()
                .parse()
                .map_err(|e| parse_err(line_no, format!("bad epoch: {e}")))?;
            let row: Vec<f64> = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(line_no, format!("bad value: {e}")))?;
            if row.len() != freqs_hz.len() {
                return Err(parse_err(
                    line_no,
                    format!("row has {} values, header has {} bins", row.len(), freqs_hz.len()),
                ));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(parse_err(line_no, "map values must be finite and >= 0".into()));
            }
            epochs_s.push(epoch);
            values.push(row);
        }
        Ok(CpcMap { epochs_s, freqs_hz, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        Self::read_csv(BufReader::new(File::open(path)?), &name)
    }
}

/// The coupling map of two vitals series. Series are aligned to their
/// common lattice first; values are coherence or coherence-weighted
/// cross-power depending on the config.
pub fn cpc_signal(hrv: &UniformSeries, edr: &UniformSeries, cfg: &CpcConfig) -> Result<CpcMap> {
    let (x, y) = ecg::align(hrv, edr)?;
    let spec = cross_spectrogram(&x, &y, cfg)?;
    let coh = coherence(&spec.cross, &spec.auto_x, &spec.auto_y)?;
    let values: Vec<Vec<f64>> = coh
        .iter()
        .zip(&spec.cross)
        .map(|(c_row, s_row)| {
            c_row
                .iter()
                .zip(s_row)
                .map(|(c, s)| match cfg.weighting {
                    CpcWeighting::CrossPower => c * s.norm(),
                    CpcWeighting::Coherence => *c,
                })
                .collect()
        })
        .collect();
    Ok(CpcMap { epochs_s: spec.epochs_s, freqs_hz: spec.freqs_hz, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Cursor;

    fn series(values: Vec<f64>) -> UniformSeries {
        UniformSeries { rate_hz: 4.0, start_index: 0, values }
    }

    fn noise(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| sigma * (rng.gen::<f64>() - 0.5) * (12.0f64).sqrt()).collect()
    }

    #[test]
    fn energy_is_conserved_by_the_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for n in [128usize, 60, 101] {
            let seg: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tapered = detrend_and_taper(&seg);
            let spectrum = windowed_spectrum(&seg);
            let time_energy: f64 = tapered.iter().map(|v| v * v).sum();
            let freq_energy: f64 =
                spectrum.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
            let rel = (time_energy - freq_energy).abs() / time_energy.max(1e-30);
            assert!(rel < 1e-9, "n={n}: relative energy error {rel}");
        }
    }

    #[test]
    fn identical_inputs_make_cross_equal_auto() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let x = series(noise(1200, 1.0, &mut rng));
        let spec = cross_spectrogram(&x, &x, &CpcConfig::default()).unwrap();
        assert!(!spec.cross.is_empty());
        for (row, auto_row) in spec.cross.iter().zip(&spec.auto_x) {
            for (sxy, sxx) in row.iter().zip(auto_row) {
                assert!(sxy.im.abs() < 1e-12 * sxx.max(1e-12));
                assert!(sxy.re >= -1e-15);
                assert!((sxy.re - sxx).abs() <= 1e-12 * sxx.max(1e-12));
            }
        }
    }

    #[test]
    fn coherence_of_a_signal_with_itself_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let x = series(noise(1024, 1.0, &mut rng));
        let cfg = CpcConfig { window_len: 512, overlap: 0, ..CpcConfig::default() };
        let spec = cross_spectrogram(&x, &x, &cfg).unwrap();
        let c = coherence(&spec.cross, &spec.auto_x, &spec.auto_y).unwrap();
        for row in &c {
            for v in row {
                assert!((*v == 0.0) || (*v >= 1.0 - 1e-9 && *v <= 1.0), "coherence {v}");
            }
        }
    }

    #[test]
    fn independent_noise_has_low_coherence() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let n = 512 * 16;
        let x = series(noise(n, 1.0, &mut rng));
        let y = series(noise(n, 1.0, &mut rng));
        let cfg = CpcConfig { window_len: 512, overlap: 0, ..CpcConfig::default() };
        let spec = cross_spectrogram(&x, &y, &cfg).unwrap();
        let c = coherence(&spec.cross, &spec.auto_x, &spec.auto_y).unwrap();
        let mut total = 0.0;
        let mut count = 0usize;
        for row in &c {
            for v in row {
                total += v;
                count += 1;
            }
        }
        let mean = total / count as f64;
        assert!(mean < 0.3, "mean coherence {mean}");
    }

    #[test]
    fn shared_tone_has_high_coherence_at_its_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let n = 512 * 8;
        let tone: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 0.3 * i as f64 / 4.0).sin())
            .collect();
        let nx = noise(n, 0.2, &mut rng);
        let ny = noise(n, 0.2, &mut rng);
        let x = series(tone.iter().zip(&nx).map(|(a, b)| a + b).collect());
        let y = series(tone.iter().zip(&ny).map(|(a, b)| 0.7 * a + b).collect());
        let cfg = CpcConfig { window_len: 512, overlap: 0, ..CpcConfig::default() };
        let spec = cross_spectrogram(&x, &y, &cfg).unwrap();
        let c = coherence(&spec.cross, &spec.auto_x, &spec.auto_y).unwrap();
        let bin = spec
            .freqs_hz
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 0.3).abs().partial_cmp(&(b.1 - 0.3).abs()).unwrap())
            .unwrap()
            .0;
        for (w, row) in c.iter().enumerate() {
            assert!(row[bin] > 0.9, "window {w}: coherence {} at bin {bin}", row[bin]);
        }
    }

    #[test]
    fn pure_delay_keeps_coherence_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(105);
        // Periodic base with the sub-segment length as period: a delayed
        // copy then phase-rotates every sub-segment identically.
        let period = 128;
        let base: Vec<f64> = (0..period).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = 512;
        let delay = 37usize;
        let x = series((0..n).map(|i| base[i % period]).collect());
        let y = series((0..n).map(|i| base[(i + period - delay % period) % period]).collect());
        let cfg = CpcConfig { window_len: 512, overlap: 0, ..CpcConfig::default() };
        let spec = cross_spectrogram(&x, &y, &cfg).unwrap();
        let c = coherence(&spec.cross, &spec.auto_x, &spec.auto_y).unwrap();
        for row in &c {
            for v in row {
                assert!((*v == 0.0) || *v >= 1.0 - 1e-9, "coherence {v}");
            }
        }
        // The delayed pair really is offset in phase at most bins.
        let some_phase = spec.cross[0][5].arg();
        assert!(some_phase.abs() > 1e-3);
    }

    #[test]
    fn coherence_is_symmetric_in_its_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(106);
        let x = series(noise(1024, 1.0, &mut rng));
        let y = series(noise(1024, 1.0, &mut rng));
        let cfg = CpcConfig { window_len: 512, overlap: 256, ..CpcConfig::default() };
        let fwd = cross_spectrogram(&x, &y, &cfg).unwrap();
        let rev = cross_spectrogram(&y, &x, &cfg).unwrap();
        let c_fwd = coherence(&fwd.cross, &fwd.auto_x, &fwd.auto_y).unwrap();
        let c_rev = coherence(&rev.cross, &rev.auto_x, &rev.auto_y).unwrap();
        for (a_row, b_row) in c_fwd.iter().zip(&c_rev) {
            for (a, b) in a_row.iter().zip(b_row) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_inputs_give_a_zero_map() {
        let hrv = series(vec![0.0; 1024]);
        let edr = series(vec![3.3; 1024]);
        let map = cpc_signal(&hrv, &edr, &CpcConfig::default()).unwrap();
        for row in &map.values {
            for v in row {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn zero_hrv_window_gives_a_zero_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let mut hrv_values = vec![0.0; 512];
        hrv_values.extend(noise(512, 1.0, &mut rng));
        let hrv = series(hrv_values);
        let edr = series(noise(1024, 1.0, &mut rng));
        let cfg = CpcConfig { window_len: 512, overlap: 0, ..CpcConfig::default() };
        let map = cpc_signal(&hrv, &edr, &cfg).unwrap();
        assert_eq!(map.num_epochs(), 2);
        assert!(map.values[0].iter().all(|v| *v == 0.0));
        assert!(map.values[1].iter().any(|v| *v > 0.0));
    }

    #[test]
    fn shared_respiratory_rhythm_peaks_in_its_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(108);
        let n = 512 * 4;
        let rsa: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 0.25 * i as f64 / 4.0).sin())
            .collect();
        let hrv = series(rsa.iter().zip(noise(n, 0.1, &mut rng)).map(|(a, b)| 0.05 * a + 0.01 * b).collect());
        let edr = series(rsa.iter().zip(noise(n, 0.1, &mut rng)).map(|(a, b)| a + 0.2 * b).collect());
        let map = cpc_signal(&hrv, &edr, &CpcConfig::default()).unwrap();
        for (e, row) in map.values.iter().enumerate() {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let f = map.freqs_hz[best];
            assert!(
                (0.2..=0.3).contains(&f),
                "epoch {e}: map peak at {f} Hz"
            );
        }
    }

    #[test]
    fn map_values_are_finite_and_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        let hrv = series(noise(2048, 0.05, &mut rng));
        let edr = series(noise(2048, 1.0, &mut rng));
        for weighting in [CpcWeighting::CrossPower, CpcWeighting::Coherence] {
            let cfg = CpcConfig { weighting, ..CpcConfig::default() };
            let map = cpc_signal(&hrv, &edr, &cfg).unwrap();
            for row in &map.values {
                for v in row {
                    assert!(v.is_finite() && *v >= 0.0);
                }
                if weighting == CpcWeighting::Coherence {
                    assert!(row.iter().all(|v| *v <= 1.0));
                }
            }
        }
    }

    #[test]
    fn map_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(110);
        let hrv = series(noise(1024, 1.0, &mut rng));
        let edr = series(noise(1024, 1.0, &mut rng));
        let a = cpc_signal(&hrv, &edr, &CpcConfig::default()).unwrap();
        let b = cpc_signal(&hrv, &edr, &CpcConfig::default()).unwrap();
        for (ra, rb) in a.values.iter().zip(&b.values) {
            assert!(ra.iter().zip(rb).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn too_little_data_is_rejected_with_durations() {
        let hrv = series(vec![0.1; 100]);
        let edr = series(vec![0.2; 100]);
        match cpc_signal(&hrv, &edr, &CpcConfig::default()).unwrap_err() {
            CoreError::InsufficientData { required_s, available_s } => {
                assert_eq!(required_s, 128.0);
                assert_eq!(available_s, 25.0);
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let bad_subs = CpcConfig { sub_segments: 2, ..CpcConfig::default() };
        assert!(bad_subs.validate().is_err());
        let bad_div = CpcConfig { window_len: 510, ..CpcConfig::default() };
        assert!(bad_div.validate().is_err());
        let bad_overlap = CpcConfig { overlap: 512, ..CpcConfig::default() };
        assert!(bad_overlap.validate().is_err());
    }

    #[test]
    fn map_csv_round_trip() {
        let map = CpcMap {
            epochs_s: vec![63.875, 95.875],
            freqs_hz: vec![0.0, 0.03125, 0.0625],
            values: vec![vec![0.0, 0.5, 1.0 / 3.0], vec![0.25, 0.125, 2.0]],
        };
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let back = CpcMap::read_csv(Cursor::new(&buf), "buffer").unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn map_csv_rejects_ragged_rows() {
        let text = "epoch_s/freq_hz,0.0,0.5\n1.0,0.1\n";
        assert!(CpcMap::read_csv(Cursor::new(text.as_bytes()), "ragged").is_err());
        let negative = "epoch_s/freq_hz,0.0\n1.0,-0.1\n";
        assert!(CpcMap::read_csv(Cursor::new(negative.as_bytes()), "neg").is_err());
    }
}
