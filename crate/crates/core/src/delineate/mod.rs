//! R-peak detection and P/Q/S/T fiducial delineation.

mod pan_tompkins;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use pan_tompkins::moving_average;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("detector configuration: {0}")]
    Config(String),
    #[error("signal of {len} samples is too short for detection, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("annotation file {path}: {message}")]
    Annotation { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Wave {
    P,
    Q,
    R,
    S,
    T,
}

impl Wave {
    pub const ALL: [Wave; 5] = [Wave::P, Wave::Q, Wave::R, Wave::S, Wave::T];

    pub fn letter(self) -> char {
        match self {
            Wave::P => 'P',
            Wave::Q => 'Q',
            Wave::R => 'R',
            Wave::S => 'S',
            Wave::T => 'T',
        }
    }
}

impl fmt::Display for Wave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fiducial {
    pub index: usize,
    pub amplitude_mv: f64,
    pub time_s: f64,
}

impl Fiducial {
    fn at(samples: &[f64], fs: f64, index: usize) -> Self {
        Self {
            index,
            amplitude_mv: samples[index],
            time_s: index as f64 / fs,
        }
    }
}

/// Fiducial points of one beat. Present points satisfy P < Q < R < S < T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatAnnotation {
    pub p: Option<Fiducial>,
    pub q: Option<Fiducial>,
    pub r: Fiducial,
    pub s: Option<Fiducial>,
    pub t: Option<Fiducial>,
}

impl BeatAnnotation {
    pub fn get(&self, wave: Wave) -> Option<&Fiducial> {
        match wave {
            Wave::P => self.p.as_ref(),
            Wave::Q => self.q.as_ref(),
            Wave::R => Some(&self.r),
            Wave::S => self.s.as_ref(),
            Wave::T => self.t.as_ref(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.p.is_some() && self.q.is_some() && self.s.is_some() && self.t.is_some()
    }
}

/// Search windows, in milliseconds, and the smoothing applied to the copy of
/// the signal on which extrema are located.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelineationConfig {
    /// Q is the minimum in (R - q_window_ms, R).
    pub q_window_ms: f64,
    /// S is the minimum in (R, R + s_window_ms).
    pub s_window_ms: f64,
    /// P is the maximum in (Q - p_window_ms.0, Q - p_window_ms.1).
    pub p_window_ms: (f64, f64),
    /// T is the maximum in (S + t_window_ms.0, S + t_window_ms.1).
    pub t_window_ms: (f64, f64),
    /// Moving-average width for locating Q and S; 0 disables.
    pub qrs_smoothing_ms: f64,
    /// Moving-average width for locating P and T; 0 disables.
    pub wave_smoothing_ms: f64,
}

impl Default for DelineationConfig {
    fn default() -> Self {
        Self {
            q_window_ms: 80.0,
            s_window_ms: 80.0,
            p_window_ms: (200.0, 20.0),
            t_window_ms: (80.0, 400.0),
            qrs_smoothing_ms: 12.0,
            wave_smoothing_ms: 40.0,
        }
    }
}

/// Detects R peaks: strictly increasing indices at least 200 ms apart.
pub fn detect_r_peaks(samples: &[f64], fs: f64) -> Result<Vec<usize>, DetectError> {
    pan_tompkins::detect(samples, fs)
}

fn smooth(samples: &[f64], fs: f64, ms: f64) -> Vec<f64> {
    let width = (ms * fs / 1000.0).round() as usize;
    if width <= 1 {
        samples.to_vec()
    } else {
        moving_average(samples, width | 1)
    }
}

#[derive(Clone, Copy)]
enum Extremum {
    Min,
    Max,
}

/// Index of the extremum over the open interval (lo, hi), or `None` when the
/// interval is empty.
fn extremum(x: &[f64], lo: isize, hi: isize, kind: Extremum) -> Option<usize> {
    let (start, end) = (lo + 1, hi - 1);
    if start > end || start < 0 || end as usize >= x.len() {
        return None;
    }
    let better = |a: f64, b: f64| match kind {
        Extremum::Min => a < b,
        Extremum::Max => a > b,
    };
    let mut best = start as usize;
    for i in start as usize + 1..=end as usize {
        if better(x[i], x[best]) {
            best = i;
        }
    }
    Some(best)
}

/// Locates P, Q, S and T around each R peak.
///
/// A window that starts before the first sample or ends after the last one
/// marks the point absent. Windows are clipped so they never cross a
/// neighbouring R peak.
pub fn delineate_beats(samples: &[f64], fs: f64, r_peaks: &[usize], cfg: &DelineationConfig) -> Vec<BeatAnnotation> {
    if r_peaks.is_empty() || samples.is_empty() {
        return Vec::new();
    }
    let qrs_view = smooth(samples, fs, cfg.qrs_smoothing_ms);
    let wave_view = smooth(samples, fs, cfg.wave_smoothing_ms);
    let n = samples.len() as isize;
    let ms = |v: f64| (v * fs / 1000.0).round() as isize;

    r_peaks
        .iter()
        .enumerate()
        .map(|(j, &r)| {
            let ri = r as isize;
            let prev = j.checked_sub(1).map(|k| r_peaks[k] as isize).unwrap_or(-1);
            let next = r_peaks.get(j + 1).map(|&k| k as isize).unwrap_or(n);

            let bounded = |lo: isize, hi: isize| (lo >= 0 && hi <= n - 1).then_some((lo.max(prev), hi.min(next)));

            let q = bounded(ri - ms(cfg.q_window_ms), ri)
                .and_then(|(lo, hi)| extremum(&qrs_view, lo, hi, Extremum::Min));
            let s = bounded(ri, ri + ms(cfg.s_window_ms))
                .and_then(|(lo, hi)| extremum(&qrs_view, lo, hi, Extremum::Min));
            let p = q.and_then(|q| {
                let q = q as isize;
                bounded(q - ms(cfg.p_window_ms.0), q - ms(cfg.p_window_ms.1))
                    .and_then(|(lo, hi)| extremum(&wave_view, lo, hi, Extremum::Max))
            });
            let t = s.and_then(|s| {
                let s = s as isize;
                bounded(s + ms(cfg.t_window_ms.0), s + ms(cfg.t_window_ms.1))
                    .and_then(|(lo, hi)| extremum(&wave_view, lo, hi, Extremum::Max))
            });

            let fid = |i: usize| Fiducial::at(samples, fs, i);
            BeatAnnotation {
                p: p.map(fid),
                q: q.map(fid),
                r: fid(r),
                s: s.map(fid),
                t: t.map(fid),
            }
        })
        .collect()
}

/// Writes `beat,r_index,p_index,q_index,s_index,t_index`; absent points are
/// left empty.
pub fn write_annotations(path: &Path, beats: &[BeatAnnotation]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "beat,r_index,p_index,q_index,s_index,t_index")?;
    let opt = |f: &Option<Fiducial>| f.map(|f| f.index.to_string()).unwrap_or_default();
    for (i, b) in beats.iter().enumerate() {
        writeln!(w, "{i},{},{},{},{},{}", b.r.index, opt(&b.p), opt(&b.q), opt(&b.s), opt(&b.t))?;
    }
    w.flush()
}

/// Reads an annotation CSV back, taking amplitudes from `samples`.
pub fn read_annotations(path: &Path, samples: &[f64], fs: f64) -> Result<Vec<BeatAnnotation>, DetectError> {
    let err = |message: String| DetectError::Annotation {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    let expected = ["beat", "r_index", "p_index", "q_index", "s_index", "t_index"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(err(format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let mut beats = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let index = |col: usize| -> Result<Option<usize>, DetectError> {
            let field = rec.get(col).unwrap_or("");
            if field.is_empty() {
                return Ok(None);
            }
            let i: usize = field.parse().map_err(|_| err(format!("bad index {field:?}")))?;
            if i >= samples.len() {
                return Err(err(format!("index {i} beyond signal of {} samples", samples.len())));
            }
            Ok(Some(i))
        };
        let fid = |i: Option<usize>| i.map(|i| Fiducial::at(samples, fs, i));
        let r = index(1)?.ok_or_else(|| err("missing r_index".into()))?;
        beats.push(BeatAnnotation {
            p: fid(index(2)?),
            q: fid(index(3)?),
            r: Fiducial::at(samples, fs, r),
            s: fid(index(4)?),
            t: fid(index(5)?),
        });
    }
    Ok(beats)
}
