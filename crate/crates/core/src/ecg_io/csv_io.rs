use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EcgRecord, Gender, IngestError};

/// Which column of a multi-column signal CSV carries the lead to analyse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnSelector {
    Index(usize),
    Name(String),
}

impl FromStr for ColumnSelector {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnSelector::Index(i),
            Err(_) => ColumnSelector::Name(s.to_string()),
        })
    }
}

/// Span of a recording to keep, in seconds from the first sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReadOptions {
    #[serde(default)]
    pub column: Option<ColumnSelector>,
    #[serde(default)]
    pub segment: Option<Segment>,
}

#[derive(Debug, Deserialize)]
struct MetadataFile {
    participant_id: String,
    age: i64,
    gender: String,
    sampling_rate_hz: f64,
    #[serde(default)]
    source_label: Option<String>,
}

/// Metadata sidecar contents: `(participant_id, age, gender, sampling_rate_hz, source_label)`.
pub struct Metadata {
    pub participant_id: String,
    pub age: u32,
    pub gender: Gender,
    pub sampling_rate_hz: f64,
    pub source_label: Option<String>,
}

pub fn read_metadata(path: &Path) -> Result<Metadata, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let meta_err = |message: String| IngestError::Metadata {
        path: path.to_path_buf(),
        message,
    };
    let raw: MetadataFile = serde_json::from_str(&text).map_err(|e| meta_err(e.to_string()))?;
    let gender = raw.gender.parse::<Gender>().map_err(meta_err)?;
    let age = u32::try_from(raw.age)
        .map_err(|_| IngestError::Validation(format!("{}: age {} is negative", raw.participant_id, raw.age)))?;
    Ok(Metadata {
        participant_id: raw.participant_id,
        age,
        gender,
        sampling_rate_hz: raw.sampling_rate_hz,
        source_label: raw.source_label,
    })
}

/// Reads one lead from a signal CSV. A first row that does not parse as
/// numbers is treated as a header.
pub fn read_signal(path: &Path, column: Option<&ColumnSelector>) -> Result<Vec<f64>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, message: String| IngestError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = reader.records();
    let Some(first) = records.next() else {
        return Err(IngestError::Validation(format!("{}: empty signal file", path.display())));
    };
    let first = first.map_err(|e| csv_error(path, e))?;
    let is_header = first.iter().any(|f| f.parse::<f64>().is_err());
    let header: Option<Vec<String>> = is_header.then(|| first.iter().map(str::to_string).collect());
    let width = first.len();
    let col = choose_column(width, header.as_deref(), column)?;

    let mut samples = Vec::new();
    let mut push = |line: u64, rec: &csv::StringRecord| -> Result<(), IngestError> {
        let field = rec
            .get(col)
            .ok_or_else(|| parse_err(line, format!("missing column {col}")))?;
        let v: f64 = field
            .parse()
            .map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
        if !v.is_finite() {
            return Err(IngestError::Validation(format!(
                "{}:{line}: non-finite sample {field:?}",
                path.display()
            )));
        }
        samples.push(v);
        Ok(())
    };
    if !is_header {
        push(line_of(&first), &first)?;
    }
    for rec in records {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        push(line_of(&rec), &rec)?;
    }
    Ok(samples)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn csv_error(path: &Path, e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    IngestError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

fn choose_column(
    width: usize,
    header: Option<&[String]>,
    selector: Option<&ColumnSelector>,
) -> Result<usize, IngestError> {
    match selector {
        Some(ColumnSelector::Index(i)) if *i < width => Ok(*i),
        Some(ColumnSelector::Index(i)) => Err(IngestError::Selection(format!(
            "column index {i} out of range for {width} columns"
        ))),
        Some(ColumnSelector::Name(name)) => header
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| IngestError::Selection(format!("no column named {name:?}"))),
        None if width == 1 => Ok(0),
        None => {
            if let Some(h) = header {
                if let Some(i) = h.iter().position(|c| c == "mv") {
                    return Ok(i);
                }
            } else if width == 2 {
                // headerless `t,mv`
                return Ok(1);
            }
            Err(IngestError::Selection(format!(
                "{width} columns present; choose the lead column explicitly"
            )))
        }
    }
}

/// Reads a signal CSV and its JSON metadata sidecar into a validated record.
pub fn read_record(signal_path: &Path, metadata_path: &Path, opts: &ReadOptions) -> Result<EcgRecord, IngestError> {
    let meta = read_metadata(metadata_path)?;
    let mut samples = read_signal(signal_path, opts.column.as_ref())?;
    if let Some(seg) = opts.segment {
        samples = cut_segment(samples, meta.sampling_rate_hz, seg)?;
    }
    let record = EcgRecord {
        participant_id: meta.participant_id,
        age: meta.age,
        gender: meta.gender,
        sampling_rate_hz: meta.sampling_rate_hz,
        samples,
        source_label: meta.source_label.unwrap_or_else(|| default_source_label(signal_path)),
    };
    record.validate()?;
    Ok(record)
}

fn default_source_label(signal_path: &Path) -> String {
    signal_path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string())
}

fn cut_segment(samples: Vec<f64>, fs: f64, seg: Segment) -> Result<Vec<f64>, IngestError> {
    if !(seg.start_s >= 0.0 && seg.duration_s > 0.0) || !(fs > 0.0) {
        return Err(IngestError::Validation(format!(
            "segment start {} s / duration {} s is invalid",
            seg.start_s, seg.duration_s
        )));
    }
    let start = (seg.start_s * fs).round() as usize;
    let len = (seg.duration_s * fs).round() as usize;
    if start >= samples.len() {
        return Err(IngestError::Validation(format!(
            "segment starts at {} s but the recording lasts {} s",
            seg.start_s,
            samples.len() as f64 / fs
        )));
    }
    let end = (start + len).min(samples.len());
    Ok(samples[start..end].to_vec())
}

/// Writes a record as a `t,mv` CSV plus JSON metadata sidecar.
///
/// Samples are printed with the shortest representation that parses back to
/// the same `f64`, so reading the files back reproduces the record exactly.
pub fn write_record(record: &EcgRecord, signal_path: &Path, metadata_path: &Path) -> Result<(), IngestError> {
    let io_err = |path: &Path| {
        let path: PathBuf = path.to_path_buf();
        move |source| IngestError::Io { path, source }
    };
    let file = File::create(signal_path).map_err(io_err(signal_path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "t,mv").map_err(io_err(signal_path))?;
    for (i, v) in record.samples.iter().enumerate() {
        let t = i as f64 / record.sampling_rate_hz;
        writeln!(w, "{t},{v}").map_err(io_err(signal_path))?;
    }
    w.flush().map_err(io_err(signal_path))?;

    let meta = serde_json::json!({
        "participant_id": record.participant_id,
        "age": record.age,
        "gender": record.gender.code(),
        "sampling_rate_hz": record.sampling_rate_hz,
        "source_label": record.source_label,
    });
    let text = serde_json::to_string_pretty(&meta).expect("metadata serialises");
    std::fs::write(metadata_path, text + "\n").map_err(io_err(metadata_path))
}
