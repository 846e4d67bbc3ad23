//! Baseline-wander and powerline removal.

mod sos;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sos::{Biquad, Sos};

use crate::ecg_io::EcgRecord;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("filter configuration: {0}")]
    Config(String),
    #[error("signal of {len} samples is too short, need at least {min}")]
    TooShort { len: usize, min: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub highpass_cutoff_hz: f64,
    pub highpass_order: usize,
    pub powerline_freq_hz: f64,
    pub notch_quality: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            highpass_cutoff_hz: 0.5,
            highpass_order: 5,
            powerline_freq_hz: 50.0,
            notch_quality: 30.0,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, fs: f64) -> Result<(), FilterError> {
        Sos::butterworth_highpass(self.highpass_order, self.highpass_cutoff_hz, fs)?;
        Sos::notch(self.powerline_freq_hz, self.notch_quality, fs)?;
        Ok(())
    }
}

/// Zero-phase Butterworth highpass (drift and DC removal).
pub fn highpass_butterworth(samples: &[f64], fs: f64, spec: &FilterSpec) -> Result<Vec<f64>, FilterError> {
    let sos = Sos::butterworth_highpass(spec.highpass_order, spec.highpass_cutoff_hz, fs)?;
    let min = 3 * spec.highpass_order;
    if samples.len() < min {
        return Err(FilterError::TooShort {
            len: samples.len(),
            min,
        });
    }
    Ok(sos.filtfilt(samples))
}

/// Zero-phase notch at the mains frequency.
pub fn powerline_notch(samples: &[f64], fs: f64, spec: &FilterSpec) -> Result<Vec<f64>, FilterError> {
    let sos = Sos::notch(spec.powerline_freq_hz, spec.notch_quality, fs)?;
    Ok(sos.filtfilt(samples))
}

/// Highpass followed by notch; metadata is carried over untouched.
pub fn clean(record: &EcgRecord, spec: &FilterSpec) -> Result<EcgRecord, FilterError> {
    let fs = record.sampling_rate_hz;
    let hp = highpass_butterworth(&record.samples, fs, spec)?;
    let samples = powerline_notch(&hp, fs, spec)?;
    Ok(EcgRecord {
        samples,
        ..record.clone()
    })
}
