#![allow(dead_code)]

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Frequency of the largest mean-removed spectral line inside `band`.
pub fn periodogram_peak_hz(values: &[f64], rate: f64, band: (f64, f64)) -> f64 {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = values.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, value) in buf.iter().enumerate().take(n / 2 + 1) {
        let f = i as f64 * rate / n as f64;
        if f < band.0 || f > band.1 {
            continue;
        }
        if value.norm() > best.1 {
            best = (i, value.norm());
        }
    }
    best.0 as f64 * rate / n as f64
}

/// Greedy matching of two sorted index lists within a sample tolerance.
/// Returns (matched, missed, spurious).
pub fn match_beats(truth: &[usize], detected: &[usize], tol: usize) -> (usize, usize, usize) {
    let mut matched = 0;
    let (mut i, mut j) = (0, 0);
    while i < truth.len() && j < detected.len() {
        let t = truth[i] as i64;
        let d = detected[j] as i64;
        if (t - d).abs() <= tol as i64 {
            matched += 1;
            i += 1;
            j += 1;
        } else if d < t {
            j += 1;
        } else {
            i += 1;
        }
    }
    (matched, truth.len() - matched, detected.len() - matched)
}
