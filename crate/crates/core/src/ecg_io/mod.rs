//! ECG record ingestion, export and synthetic population generation.

mod csv_io;
mod synth;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{read_metadata, read_record, read_signal, write_record, ColumnSelector, ReadOptions, Segment};
pub use synth::{
    generate_population, GroundTruth, MorphologyPrior, ParticipantMorphology, Population, Spread,
    SyntheticPopulationConfig, TrueBeat, WavePrior, WaveShape,
};

/// Youngest and oldest admissible participant ages, inclusive.
pub const MIN_AGE: u32 = 21;
pub const MAX_AGE: u32 = 89;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("metadata {path}: {message}")]
    Metadata { path: PathBuf, message: String },
    #[error("invalid record: {0}")]
    Validation(String),
    #[error("column selection: {0}")]
    Selection(String),
    #[error("synthetic population is empty (n_participants = 0)")]
    EmptyPopulation,
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl Gender {
    pub fn code(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "M" => Ok(Gender::Male),
            "F" => Ok(Gender::Female),
            other => Err(format!("unknown gender {other:?}, expected \"M\" or \"F\"")),
        }
    }
}

/// One participant's single-lead trace plus the metadata the audit labels it with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    pub participant_id: String,
    pub age: u32,
    pub gender: Gender,
    pub sampling_rate_hz: f64,
    /// Millivolts.
    pub samples: Vec<f64>,
    pub source_label: String,
}

impl EcgRecord {
    /// Checks the record invariants: positive finite rate, non-empty finite
    /// samples, admissible age.
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.sampling_rate_hz.is_finite() && self.sampling_rate_hz > 0.0) {
            return Err(IngestError::Validation(format!(
                "{}: sampling rate must be positive, got {}",
                self.participant_id, self.sampling_rate_hz
            )));
        }
        if self.samples.is_empty() {
            return Err(IngestError::Validation(format!("{}: no samples", self.participant_id)));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::Validation(format!(
                "{}: non-finite sample at index {i}",
                self.participant_id
            )));
        }
        validate_age(self.age).map_err(|msg| IngestError::Validation(format!("{}: {msg}", self.participant_id)))
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sampling_rate_hz
    }
}

pub(crate) fn validate_age(age: u32) -> Result<(), String> {
    if (MIN_AGE..=MAX_AGE).contains(&age) {
        Ok(())
    } else {
        Err(format!("age {age} outside admissible range {MIN_AGE}-{MAX_AGE}"))
    }
}
