//! Shared signal-processing blocks: Hampel outlier rejection, Butterworth
//! IIR design, zero-phase filtering, normalization, and moving averages.
//!
//! Butterworth filters are designed as analog prototypes, frequency
//! transformed, mapped through the bilinear transform with pre-warping,
//! and realized as cascaded second-order sections so that high orders and
//! very low cutoffs stay numerically stable. Application is always
//! forward-backward (zero phase) via [`filter_forward_backward`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

// ── hampel ──────────────────────────────────────────────────────────────────

/// Gaussian consistency constant: for normal data, `MAD * 1.4826`
/// estimates the standard deviation.
pub const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HampelConfig {
    /// Full window width in samples; must be odd and at least 3.
    pub window_size: usize,
    /// Outlier threshold as a multiple of the MAD-based sigma.
    pub threshold: f64,
}

impl HampelConfig {
    pub fn new(window_size: usize, threshold: f64) -> Result<Self> {
        if window_size < 3 || window_size % 2 == 0 {
            return Err(CoreError::Config(format!(
                "hampel window must be an odd integer >= 3, got {window_size}"
            )));
        }
        if !(threshold >= 0.0) {
            return Err(CoreError::Config(format!(
                "hampel threshold must be non-negative, got {threshold}"
            )));
        }
        Ok(HampelConfig { window_size, threshold })
    }
}

impl Default for HampelConfig {
    /// Window 11, threshold 0.4: the CSI chain settings.
    ///
    /// The window is kept short so the local median tracks the breathing
    /// and heartbeat waves instead of flattening them; with the tight 0.4
    /// threshold, a window spanning a full breath replaces most samples
    /// and erases nearly all heart-band power.
    fn default() -> Self {
        HampelConfig { window_size: 11, threshold: 0.4 }
    }
}

fn median_of(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (_, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    let hi = *m;
    if n % 2 == 1 {
        hi
    } else {
        // Even count: average the two middle order statistics.
        let lo = buf[..mid]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Sliding-window median/MAD outlier replacement.
///
/// For each index the window is centered and truncated at the edges. A
/// sample deviating from the window median by more than
/// `threshold * 1.4826 * MAD` is replaced by that median. With zero MAD a
/// sample is kept only if it equals the median exactly.
pub fn hampel(series: &[f64], cfg: &HampelConfig) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(CoreError::MalformedData("hampel on an empty series".into()));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::MalformedData("hampel input contains non-finite samples".into()));
    }
    let half = cfg.window_size / 2;
    let n = series.len();
    let mut out = Vec::with_capacity(n);
    let mut window = Vec::with_capacity(cfg.window_size);
    let mut deviations = Vec::with_capacity(cfg.window_size);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        window.clear();
        window.extend_from_slice(&series[lo..hi]);
        let mu = median_of(&mut window);
        deviations.clear();
        deviations.extend(series[lo..hi].iter().map(|v| (v - mu).abs()));
        let sigma = MAD_SCALE * median_of(&mut deviations);
        let x = series[i];
        if (x - mu).abs() > cfg.threshold * sigma {
            out.push(mu);
        } else {
            out.push(x);
        }
    }
    Ok(out)
}

// ── butterworth design ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    LowPass,
    HighPass,
    BandPass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ButterworthConfig {
    pub order: usize,
    pub kind: FilterKind,
    /// Cutoffs as fractions of the Nyquist frequency, each in (0, 1).
    /// Low-pass and high-pass use `cutoffs[0]`; band-pass uses
    /// `[low, high]` with low < high.
    pub cutoffs: Vec<f64>,
}

impl ButterworthConfig {
    pub fn low_pass(order: usize, cutoff: f64) -> Self {
        ButterworthConfig { order, kind: FilterKind::LowPass, cutoffs: vec![cutoff] }
    }

    pub fn high_pass(order: usize, cutoff: f64) -> Self {
        ButterworthConfig { order, kind: FilterKind::HighPass, cutoffs: vec![cutoff] }
    }

    pub fn band_pass(order: usize, low: f64, high: f64) -> Self {
        ButterworthConfig { order, kind: FilterKind::BandPass, cutoffs: vec![low, high] }
    }

    fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(CoreError::Config("butterworth order must be >= 1".into()));
        }
        let expected = if self.kind == FilterKind::BandPass { 2 } else { 1 };
        if self.cutoffs.len() != expected {
            return Err(CoreError::Config(format!(
                "{:?} needs {expected} cutoff(s), got {}",
                self.kind,
                self.cutoffs.len()
            )));
        }
        for c in &self.cutoffs {
            if !(*c > 0.0 && *c < 1.0) {
                return Err(CoreError::Config(format!(
                    "cutoff must lie in (0, 1) as a fraction of Nyquist, got {c}"
                )));
            }
        }
        if self.kind == FilterKind::BandPass && self.cutoffs[0] >= self.cutoffs[1] {
            return Err(CoreError::Config(
                "band-pass needs low cutoff < high cutoff".into(),
            ));
        }
        Ok(())
    }
}

/// One biquad `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

/// A designed filter: cascaded second-order sections with the overall gain
/// folded into the first section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirFilter {
    pub sections: Vec<Sos>,
    /// Effective recursion order (number of poles), used to size the
    /// forward-backward edge padding.
    pub order: usize,
}

/// Designs a digital Butterworth filter.
///
/// Pipeline: analog low-pass prototype poles on the unit circle's left
/// half, frequency transformation (scale / invert / band transform) at the
/// pre-warped cutoff(s), bilinear map `z = (2 + s) / (2 - s)`, then
/// pole-pair grouping into second-order sections.
pub fn butterworth_design(cfg: &ButterworthConfig) -> Result<IirFilter> {
    cfg.validate()?;
    let n = cfg.order;

    // Analog prototype: poles at exp(j*(pi/2 + pi*(2k+1)/(2n))), k = 0..n-1.
    let proto: Vec<Complex64> = (0..n)
        .map(|k| {
            let theta = std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * (2.0 * k as f64 + 1.0) / (2.0 * n as f64);
            Complex64::new(theta.cos(), theta.sin())
        })
        .collect();

    let warp = |frac: f64| 2.0 * (std::f64::consts::PI * frac / 2.0).tan();

    // Analog zeros, poles, gain after the frequency transformation.
    let (zeros_a, poles_a, gain_a): (Vec<Complex64>, Vec<Complex64>, f64) = match cfg.kind {
        FilterKind::LowPass => {
            let wc = warp(cfg.cutoffs[0]);
            let poles = proto.iter().map(|p| p * wc).collect();
            (vec![], poles, wc.powi(n as i32))
        }
        FilterKind::HighPass => {
            let wc = warp(cfg.cutoffs[0]);
            let poles: Vec<Complex64> = proto.iter().map(|p| wc / p).collect();
            // k = 1 so |H| -> 1 as s -> inf; n zeros at s = 0.
            (vec![Complex64::new(0.0, 0.0); n], poles, 1.0)
        }
        FilterKind::BandPass => {
            let wl = warp(cfg.cutoffs[0]);
            let wh = warp(cfg.cutoffs[1]);
            let bw = wh - wl;
            let w0sq = wl * wh;
            let mut poles = Vec::with_capacity(2 * n);
            for p in &proto {
                let half = p * (bw / 2.0);
                let disc = (half * half - w0sq).sqrt();
                poles.push(half + disc);
                poles.push(half - disc);
            }
            (vec![Complex64::new(0.0, 0.0); n], poles, bw.powi(n as i32))
        }
    };

    // Bilinear transform with c = 2 (T = 1): s -> 2 (1 - z^-1)/(1 + z^-1).
    let c = Complex64::new(2.0, 0.0);
    let map = |s: &Complex64| (c + s) / (c - s);
    let zeros_d: Vec<Complex64> = zeros_a.iter().map(map).collect();
    let poles_d: Vec<Complex64> = poles_a.iter().map(map).collect();
    let num: Complex64 = zeros_a.iter().map(|z| c - z).product();
    let den: Complex64 = poles_a.iter().map(|p| c - p).product();
    let gain_d = gain_a * (num / den).re;
    // Zeros "at infinity" land at z = -1.
    let mut zeros_d = zeros_d;
    zeros_d.resize(poles_d.len(), Complex64::new(-1.0, 0.0));

    let sections = zpk_to_sos(&zeros_d, &poles_d, gain_d)?;
    Ok(IirFilter { sections, order: poles_a.len() })
}

/// Groups digital poles/zeros into biquads. Poles come in conjugate pairs
/// (plus one real pole for odd orders); every zero here is real (at +/-1),
/// so pairing is unambiguous.
fn zpk_to_sos(zeros: &[Complex64], poles: &[Complex64], gain: f64) -> Result<Vec<Sos>> {
    let mut remaining: Vec<Complex64> = poles.to_vec();
    let mut pole_pairs: Vec<(Complex64, Option<Complex64>)> = Vec::new();
    // Pair each complex pole with its conjugate; real poles pair together.
    while let Some(p) = remaining.pop() {
        if p.im.abs() > 1e-12 {
            let at = remaining
                .iter()
                .position(|q| (q - p.conj()).norm() < 1e-8)
                .ok_or_else(|| {
                    CoreError::Config("unpaired complex pole in filter design".into())
                })?;
            let q = remaining.swap_remove(at);
            pole_pairs.push((p, Some(q)));
        } else if let Some(at) = remaining.iter().position(|q| q.im.abs() <= 1e-12) {
            let q = remaining.swap_remove(at);
            pole_pairs.push((p, Some(q)));
        } else {
            pole_pairs.push((p, None));
        }
    }
    // Stable ordering: sections sorted by pole radius, closest to the unit
    // circle last, so early sections absorb the best-conditioned dynamics.
    pole_pairs.sort_by(|a, b| {
        let ra = a.0.norm();
        let rb = b.0.norm();
        ra.partial_cmp(&rb).unwrap()
    });

    let mut zero_pool: Vec<Complex64> = zeros.to_vec();
    let mut take_zeros = |count: usize| -> Vec<Complex64> {
        let take = count.min(zero_pool.len());
        zero_pool.drain(..take).collect()
    };

    let mut sections = Vec::with_capacity(pole_pairs.len());
    for (p, q) in &pole_pairs {
        let (a1, a2) = match q {
            Some(q) => ((-(p + q)).re, (p * q).re),
            None => (-p.re, 0.0),
        };
        let zs = take_zeros(if q.is_some() { 2 } else { 1 });
        let (b0, b1, b2) = match zs.as_slice() {
            [] => (1.0, 0.0, 0.0),
            [z] => (1.0, -z.re, 0.0),
            [z1, z2] => (1.0, (-(z1 + z2)).re, (z1 * z2).re),
            _ => unreachable!(),
        };
        sections.push(Sos { b: [b0, b1, b2], a: [1.0, a1, a2] });
    }
    if let Some(first) = sections.first_mut() {
        for b in &mut first.b {
            *b *= gain;
        }
    }
    Ok(sections)
}

impl IirFilter {
    /// Complex frequency response at normalized frequency `frac` (fraction
    /// of Nyquist, 0..1).
    pub fn response(&self, frac: f64) -> Complex64 {
        let w = std::f64::consts::PI * frac;
        let z1 = Complex64::new(w.cos(), -w.sin()); // z^-1
        let z2 = z1 * z1;
        let mut h = Complex64::new(1.0, 0.0);
        for s in &self.sections {
            let num = s.b[0] + s.b[1] * z1 + s.b[2] * z2;
            let den = s.a[0] + s.a[1] * z1 + s.a[2] * z2;
            h *= num / den;
        }
        h
    }

    pub fn magnitude(&self, frac: f64) -> f64 {
        self.response(frac).norm()
    }

    /// All pole radii; stability requires every one < 1.
    pub fn pole_radii(&self) -> Vec<f64> {
        self.sections
            .iter()
            .flat_map(|s| {
                let a1 = s.a[1];
                let a2 = s.a[2];
                let disc = a1 * a1 - 4.0 * a2;
                if disc >= 0.0 {
                    let r = disc.sqrt();
                    vec![((-a1 + r) / 2.0).abs(), ((-a1 - r) / 2.0).abs()]
                } else {
                    let radius = a2.sqrt();
                    vec![radius, radius]
                }
            })
            .collect()
    }
}

// ── zero-phase filtering ────────────────────────────────────────────────────

/// Steady-state per-section state for a constant unit input, used to
/// suppress startup transients.
fn section_steady_state(s: &Sos) -> (f64, [f64; 2]) {
    let y = (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[1] + s.a[2]);
    let s1 = s.b[2] - s.a[2] * y;
    let s0 = s.b[1] - s.a[1] * y + s1;
    (y, [s0, s1])
}

/// Runs the cascade once (direct form II transposed) with states scaled to
/// the steady-state response for the first input sample.
fn sos_filter(filter: &IirFilter, x: &[f64]) -> Vec<f64> {
    let mut data = x.to_vec();
    let mut scale = if x.is_empty() { 0.0 } else { x[0] };
    for s in &filter.sections {
        let (y_ss, zi) = section_steady_state(s);
        let mut s0 = zi[0] * scale;
        let mut s1 = zi[1] * scale;
        for v in data.iter_mut() {
            let xn = *v;
            let yn = s.b[0] * xn + s0;
            s0 = s.b[1] * xn - s.a[1] * yn + s1;
            s1 = s.b[2] * xn - s.a[2] * yn;
            *v = yn;
        }
        // The next section sees this section's steady state as its "DC".
        scale *= y_ss;
    }
    data
}

fn two_pass(filter: &IirFilter, x: &[f64]) -> Vec<f64> {
    let mut y = sos_filter(filter, x);
    y.reverse();
    let mut y = sos_filter(filter, &y);
    y.reverse();
    y
}

/// Zero-phase filtering. Edges are extended by odd reflection over
/// `3 * order` samples before filtering and trimmed afterwards, so the
/// output length equals the input length.
///
/// Residual startup transients depend on which end filtering starts from,
/// so both pass orders (forward-backward and backward-forward) are
/// computed and averaged; the result then commutes exactly with time
/// reversal.
pub fn filter_forward_backward(series: &[f64], filter: &IirFilter) -> Result<Vec<f64>> {
    let pad = 3 * filter.order;
    if series.len() <= pad {
        return Err(CoreError::MalformedData(format!(
            "forward-backward filtering needs more than {pad} samples (3x filter order), got {}",
            series.len()
        )));
    }
    let n = series.len();
    let mut padded = Vec::with_capacity(n + 2 * pad);
    let first = series[0];
    let last = series[n - 1];
    for i in (1..=pad).rev() {
        padded.push(2.0 * first - series[i]);
    }
    padded.extend_from_slice(series);
    for i in 1..=pad {
        padded.push(2.0 * last - series[n - 1 - i]);
    }

    let from_left = two_pass(filter, &padded);
    padded.reverse();
    let mut from_right = two_pass(filter, &padded);
    from_right.reverse();
    let y: Vec<f64> = from_left
        .iter()
        .zip(&from_right)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Ok(y[pad..pad + n].to_vec())
}

// ── normalization and moving average ────────────────────────────────────────

/// Zero-mean, unit-variance standardization (population variance).
pub fn normalize(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(CoreError::MalformedData(
            "normalize needs at least 2 samples".into(),
        ));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(CoreError::MalformedData(
            "normalize on a constant series (zero variance)".into(),
        ));
    }
    let std = var.sqrt();
    Ok(series.iter().map(|v| (v - mean) / std).collect())
}

/// Centered moving mean with edge truncation; the output has the input's
/// length. Even windows extend one sample further to the right.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 1 {
        return Err(CoreError::Config("moving average window must be >= 1".into()));
    }
    let n = series.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in series {
        acc += v;
        prefix.push(acc);
    }
    let left = (window - 1) / 2;
    let right = window / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(left);
        let hi = (i + right + 1).min(n);
        out.push((prefix[hi] - prefix[lo]) / (hi - lo) as f64);
    }
    Ok(out)
}
