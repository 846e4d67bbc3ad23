//! Windowed PQRST statistical features: mean amplitude differences to R and
//! mean intervals between fiducials.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::AgeGroup;
use crate::delineate::{BeatAnnotation, Wave};
use crate::ecg_io::Gender;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature undefined: no beat has both {0} and {1}")]
    Undefined(Wave, Wave),
    #[error("interval endpoints out of order: {0} does not precede {1}")]
    Order(Wave, Wave),
    #[error("feature table {path}: {message}")]
    Table { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const AMPLITUDE_WAVES: [Wave; 4] = [Wave::P, Wave::Q, Wave::S, Wave::T];
const ADJACENT_PAIRS: [(Wave, Wave); 4] = [(Wave::P, Wave::Q), (Wave::Q, Wave::R), (Wave::R, Wave::S), (Wave::S, Wave::T)];

/// Which interval pairs enter the feature vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalSet {
    /// P-Q, Q-R, R-S, S-T.
    #[default]
    Adjacent,
    /// Every ordered pair of distinct waves (10 intervals).
    AllPairs,
}

impl IntervalSet {
    pub fn pairs(self) -> Vec<(Wave, Wave)> {
        match self {
            IntervalSet::Adjacent => ADJACENT_PAIRS.to_vec(),
            IntervalSet::AllPairs => {
                let mut out = Vec::with_capacity(10);
                for (i, &x) in Wave::ALL.iter().enumerate() {
                    for &y in &Wave::ALL[i + 1..] {
                        out.push((x, y));
                    }
                }
                out
            }
        }
    }

    /// Column names, amplitude differences first.
    pub fn feature_names(self) -> Vec<String> {
        let mut names: Vec<String> = AMPLITUDE_WAVES.iter().map(|w| format!("amp_{w}R")).collect();
        names.extend(self.pairs().iter().map(|(x, y)| format!("int_{x}{y}")));
        names
    }
}

/// Features of one analysis window plus the labels every task may need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub participant_id: String,
    pub window_index: usize,
    pub gender: Gender,
    pub age_group: AgeGroup,
    /// Ordered as the owning table's `names`.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<FeatureVector>,
}

/// `(1/N) * sum(A_X - A_R)` over beats where X was found.
pub fn mean_amplitude_difference(beats: &[BeatAnnotation], x: Wave) -> Result<f64, FeatureError> {
    let (sum, n) = beats
        .iter()
        .filter_map(|b| b.get(x).map(|f| f.amplitude_mv - b.r.amplitude_mv))
        .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
    if n == 0 {
        return Err(FeatureError::Undefined(x, Wave::R));
    }
    Ok(sum / n as f64)
}

/// `(1/N) * sum(t_Y - t_X)` over beats where both X and Y were found.
pub fn mean_interval(beats: &[BeatAnnotation], x: Wave, y: Wave) -> Result<f64, FeatureError> {
    if x > y {
        return Err(FeatureError::Order(x, y));
    }
    let (sum, n) = beats
        .iter()
        .filter_map(|b| Some(b.get(y)?.time_s - b.get(x)?.time_s))
        .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
    if n == 0 {
        return Err(FeatureError::Undefined(x, y));
    }
    Ok(sum / n as f64)
}

/// All features of one set of beats, in `IntervalSet::feature_names` order.
pub fn feature_values(beats: &[BeatAnnotation], set: IntervalSet) -> Result<Vec<f64>, FeatureError> {
    let mut out = Vec::with_capacity(4 + set.pairs().len());
    for w in AMPLITUDE_WAVES {
        out.push(mean_amplitude_difference(beats, w)?);
    }
    for (x, y) in set.pairs() {
        out.push(mean_interval(beats, x, y)?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct WindowLabels {
    pub participant_id: String,
    pub gender: Gender,
    pub age_group: AgeGroup,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub windows: usize,
    pub kept: usize,
    pub too_few_beats: usize,
    pub undefined: usize,
}

impl DropCounts {
    pub fn merge(&mut self, other: DropCounts) {
        self.windows += other.windows;
        self.kept += other.kept;
        self.too_few_beats += other.too_few_beats;
        self.undefined += other.undefined;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_s: f64,
    pub min_complete_beats: usize,
    pub intervals: IntervalSet,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_s: 10.0,
            min_complete_beats: 3,
            intervals: IntervalSet::Adjacent,
        }
    }
}

impl WindowConfig {
    fn window_len(&self, fs: f64) -> usize {
        ((self.window_s * fs).round() as usize).max(1)
    }
}

/// Tiles the record with non-overlapping full windows and computes one
/// feature vector per window from the beats whose R peak falls inside it.
/// Windows with fewer than `min_complete_beats` fully delineated beats are
/// dropped and counted.
pub fn windowed_features(
    beats: &[BeatAnnotation],
    fs: f64,
    record_len: usize,
    labels: &WindowLabels,
    cfg: &WindowConfig,
) -> (Vec<FeatureVector>, DropCounts) {
    let width = cfg.window_len(fs);
    let n_windows = record_len / width;
    let mut counts = DropCounts {
        windows: n_windows,
        ..DropCounts::default()
    };
    let mut out = Vec::new();
    let mut start = 0;
    for k in 0..n_windows {
        let (lo, hi) = (k * width, (k + 1) * width);
        while start < beats.len() && beats[start].r.index < lo {
            start += 1;
        }
        let mut end = start;
        while end < beats.len() && beats[end].r.index < hi {
            end += 1;
        }
        let window = &beats[start..end];
        if let Some(fv) = window_vector(window, k, labels, cfg, &mut counts) {
            out.push(fv);
        }
        start = end;
    }
    (out, counts)
}

fn window_vector(
    window: &[BeatAnnotation],
    index: usize,
    labels: &WindowLabels,
    cfg: &WindowConfig,
    counts: &mut DropCounts,
) -> Option<FeatureVector> {
    if window.iter().filter(|b| b.is_complete()).count() < cfg.min_complete_beats {
        counts.too_few_beats += 1;
        return None;
    }
    match feature_values(window, cfg.intervals) {
        Ok(values) if values.iter().all(|v| v.is_finite()) => {
            counts.kept += 1;
            Some(FeatureVector {
                participant_id: labels.participant_id.clone(),
                window_index: index,
                gender: labels.gender,
                age_group: labels.age_group,
                values,
            })
        }
        _ => {
            counts.undefined += 1;
            None
        }
    }
}

/// Incremental counterpart of [`windowed_features`]: beats are pushed one
/// at a time in R-peak order and each window is emitted when a later beat
/// (or `finish`) closes it.
pub struct StreamingFeatures {
    cfg: WindowConfig,
    labels: WindowLabels,
    width: usize,
    current: usize,
    sums: Vec<(f64, usize)>,
    complete: usize,
    counts: DropCounts,
    out: Vec<FeatureVector>,
}

impl StreamingFeatures {
    pub fn new(fs: f64, labels: WindowLabels, cfg: WindowConfig) -> Self {
        let width = cfg.window_len(fs);
        let n = 4 + cfg.intervals.pairs().len();
        Self {
            cfg,
            labels,
            width,
            current: 0,
            sums: vec![(0.0, 0); n],
            complete: 0,
            counts: DropCounts::default(),
            out: Vec::new(),
        }
    }

    pub fn push(&mut self, beat: &BeatAnnotation) {
        let k = beat.r.index / self.width;
        while self.current < k {
            self.close();
        }
        if beat.is_complete() {
            self.complete += 1;
        }
        for (slot, w) in self.sums.iter_mut().zip(AMPLITUDE_WAVES) {
            if let Some(f) = beat.get(w) {
                slot.0 += f.amplitude_mv - beat.r.amplitude_mv;
                slot.1 += 1;
            }
        }
        for (slot, (x, y)) in self.sums[4..].iter_mut().zip(self.cfg.intervals.pairs()) {
            if let (Some(a), Some(b)) = (beat.get(x), beat.get(y)) {
                slot.0 += b.time_s - a.time_s;
                slot.1 += 1;
            }
        }
    }

    fn close(&mut self) {
        let index = self.current;
        self.counts.windows += 1;
        if self.complete < self.cfg.min_complete_beats {
            self.counts.too_few_beats += 1;
        } else if self.sums.iter().any(|&(_, n)| n == 0) {
            self.counts.undefined += 1;
        } else {
            self.counts.kept += 1;
            self.out.push(FeatureVector {
                participant_id: self.labels.participant_id.clone(),
                window_index: index,
                gender: self.labels.gender,
                age_group: self.labels.age_group,
                values: self.sums.iter().map(|&(s, n)| s / n as f64).collect(),
            });
        }
        self.current += 1;
        self.complete = 0;
        self.sums.iter_mut().for_each(|s| *s = (0.0, 0));
    }

    /// Closes every full window of a record of `record_len` samples.
    pub fn finish(mut self, record_len: usize) -> (Vec<FeatureVector>, DropCounts) {
        let n_windows = record_len / self.width;
        while self.current < n_windows {
            self.close();
        }
        (self.out, self.counts)
    }
}

const LABEL_COLUMNS: [&str; 4] = ["participant_id", "window_index", "gender", "age_group"];

impl FeatureTable {
    pub fn new(intervals: IntervalSet) -> Self {
        Self {
            names: intervals.feature_names(),
            rows: Vec::new(),
        }
    }

    pub fn participants(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.participant_id.as_str()).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), FeatureError> {
        let mut w = BufWriter::new(File::create(path)?);
        let header: Vec<&str> = LABEL_COLUMNS.iter().copied().chain(self.names.iter().map(String::as_str)).collect();
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            write!(w, "{},{},{},{}", r.participant_id, r.window_index, r.gender, r.age_group)?;
            for v in &r.values {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, FeatureError> {
        let err = |message: String| FeatureError::Table {
            path: path.display().to_string(),
            message,
        };
        let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
        if headers.len() <= LABEL_COLUMNS.len() || headers.iter().take(4).ne(LABEL_COLUMNS.iter().copied()) {
            return Err(err(format!(
                "header must start with {} followed by feature columns",
                LABEL_COLUMNS.join(",")
            )));
        }
        let names: Vec<String> = headers.iter().skip(4).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let at = |m: String| err(format!("line {line}: {m}"));
            let window_index = rec[1].parse().map_err(|_| at(format!("bad window_index {:?}", &rec[1])))?;
            let gender = rec[2].parse().map_err(at)?;
            let age_group = rec[3].parse().map_err(at)?;
            let values = rec
                .iter()
                .skip(4)
                .map(|f| f.parse::<f64>().map_err(|_| at(format!("bad value {f:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(FeatureVector {
                participant_id: rec[0].to_string(),
                window_index,
                gender,
                age_group,
                values,
            });
        }
        Ok(Self { names, rows })
    }
}
