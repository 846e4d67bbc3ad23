//! Offline Pan-Tompkins QRS detection.

use crate::preprocess::Sos;

use super::DetectError;

const REFRACTORY_S: f64 = 0.200;
const T_WAVE_WINDOW_S: f64 = 0.360;
const INTEGRATION_S: f64 = 0.150;
const REFINE_S: f64 = 0.075;

pub(super) fn detect(samples: &[f64], fs: f64) -> Result<Vec<usize>, DetectError> {
    if !(fs >= 100.0) {
        return Err(DetectError::Config(format!("sampling rate {fs} Hz is below 100 Hz")));
    }
    if (samples.len() as f64) < 2.0 * fs {
        return Err(DetectError::TooShort {
            len: samples.len(),
            min: (2.0 * fs).ceil() as usize,
        });
    }

    let band = bandpass(samples, fs)?;
    let slope = derivative(&band);
    let squared: Vec<f64> = slope.iter().map(|v| v * v).collect();
    let integrated = moving_average(&squared, ((INTEGRATION_S * fs).round() as usize).max(1));

    let refractory = (REFRACTORY_S * fs).round() as usize;
    let candidates = local_maxima(&integrated, refractory);
    let qrs = classify(&candidates, &integrated, &slope, fs);
    Ok(refine(&qrs, samples, fs, refractory))
}

fn bandpass(samples: &[f64], fs: f64) -> Result<Vec<f64>, DetectError> {
    let hp = Sos::butterworth_highpass(2, 5.0, fs).map_err(|e| DetectError::Config(e.to_string()))?;
    let lp = Sos::butterworth_lowpass(2, 15.0, fs).map_err(|e| DetectError::Config(e.to_string()))?;
    Ok(lp.filtfilt(&hp.filtfilt(samples)))
}

/// Five-point centred derivative `(-x[n-2] - 2x[n-1] + 2x[n+1] + x[n+2]) / 8`,
/// with edge samples repeated.
fn derivative(x: &[f64]) -> Vec<f64> {
    let n = x.len() as isize;
    let at = |i: isize| x[i.clamp(0, n - 1) as usize];
    (0..n)
        .map(|i| (-at(i - 2) - 2.0 * at(i - 1) + 2.0 * at(i + 1) + at(i + 2)) / 8.0)
        .collect()
}

/// Centred moving average over `width` samples, truncated at the edges.
pub(crate) fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    if width <= 1 || n == 0 {
        return x.to_vec();
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    let before = (width - 1) / 2;
    let after = width - 1 - before;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

/// Strict local maxima, thinned so that no two survivors are closer than
/// `distance`; taller peaks win.
fn local_maxima(x: &[f64], distance: usize) -> Vec<usize> {
    let mut peaks: Vec<usize> = (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] > 0.0 && x[i] > x[i - 1] && x[i] >= x[i + 1])
        .collect();
    let mut by_height = peaks.clone();
    by_height.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut keep = vec![false; x.len()];
    let mut kept: Vec<usize> = Vec::new();
    for i in by_height {
        if kept.iter().all(|&k| k.abs_diff(i) >= distance) {
            keep[i] = true;
            kept.push(i);
        }
    }
    peaks.retain(|&i| keep[i]);
    peaks
}

struct Thresholds {
    signal: f64,
    noise: f64,
}

impl Thresholds {
    fn primary(&self) -> f64 {
        self.noise + 0.25 * (self.signal - self.noise)
    }

    fn secondary(&self) -> f64 {
        0.5 * self.primary()
    }
}

fn max_abs(x: &[f64], center: usize, half: usize) -> f64 {
    let lo = center.saturating_sub(half);
    let hi = (center + half).min(x.len() - 1);
    x[lo..=hi].iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Adaptive dual-threshold classification with T-wave rejection and
/// search-back over missed beats.
fn classify(candidates: &[usize], integrated: &[f64], slope: &[f64], fs: f64) -> Vec<usize> {
    let learn = ((2.0 * fs) as usize).min(integrated.len());
    let head = &integrated[..learn];
    let mut th = Thresholds {
        signal: 0.25 * head.iter().cloned().fold(0.0, f64::max),
        noise: 0.5 * head.iter().sum::<f64>() / learn.max(1) as f64,
    };
    let t_window = (T_WAVE_WINDOW_S * fs) as usize;
    let refractory = (REFRACTORY_S * fs) as usize;
    let slope_half = (0.075 * fs) as usize;

    let mut qrs: Vec<usize> = Vec::new();
    let mut qrs_slopes: Vec<f64> = Vec::new();
    let mut skipped: Vec<usize> = Vec::new();

    for &c in candidates {
        let height = integrated[c];

        // search-back for a beat missed since the last detection
        if let (Some(&last), Some(rr)) = (qrs.last(), mean_rr(&qrs)) {
            if (c - last) as f64 > 1.66 * rr {
                let found = skipped
                    .iter()
                    .copied()
                    .filter(|&s| s > last + refractory && s < c && integrated[s] > th.secondary())
                    .max_by(|&a, &b| integrated[a].total_cmp(&integrated[b]));
                if let Some(s) = found {
                    th.signal = 0.25 * integrated[s] + 0.75 * th.signal;
                    qrs.push(s);
                    qrs_slopes.push(max_abs(slope, s, slope_half));
                }
            }
        }

        if height > th.primary() {
            let this_slope = max_abs(slope, c, slope_half);
            let is_t_wave = match (qrs.last(), qrs_slopes.last()) {
                (Some(&last), Some(&prev_slope)) => c - last < t_window && this_slope < 0.5 * prev_slope,
                _ => false,
            };
            let too_close = qrs.last().is_some_and(|&last| c - last < refractory);
            if is_t_wave || too_close {
                th.noise = 0.125 * height + 0.875 * th.noise;
                skipped.push(c);
            } else {
                th.signal = 0.125 * height + 0.875 * th.signal;
                qrs.push(c);
                qrs_slopes.push(this_slope);
            }
        } else {
            th.noise = 0.125 * height + 0.875 * th.noise;
            skipped.push(c);
        }
    }
    qrs
}

fn mean_rr(qrs: &[usize]) -> Option<f64> {
    if qrs.len() < 2 {
        return None;
    }
    let recent = &qrs[qrs.len().saturating_sub(9)..];
    let span = (recent[recent.len() - 1] - recent[0]) as f64;
    Some(span / (recent.len() - 1) as f64)
}

/// Moves each detection onto the signal maximum nearby and re-applies the
/// refractory rule, keeping the taller of two conflicting peaks.
fn refine(qrs: &[usize], samples: &[f64], fs: f64, refractory: usize) -> Vec<usize> {
    let half = (REFINE_S * fs).round() as usize;
    let mut peaks: Vec<usize> = qrs
        .iter()
        .map(|&c| {
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(samples.len() - 1);
            (lo..=hi)
                .reduce(|best, i| if samples[i] > samples[best] { i } else { best })
                .unwrap_or(c)
        })
        .collect();
    peaks.sort_unstable();
    peaks.dedup();
    let mut out: Vec<usize> = Vec::with_capacity(peaks.len());
    for p in peaks {
        match out.last() {
            Some(&last) if p - last < refractory => {
                if samples[p] > samples[last] {
                    *out.last_mut().unwrap() = p;
                }
            }
            _ => out.push(p),
        }
    }
    out
}
