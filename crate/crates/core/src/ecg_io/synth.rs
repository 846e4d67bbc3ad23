//! Synthetic ECG populations built from five Gaussian waves per beat.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EcgRecord, Gender, IngestError, MAX_AGE, MIN_AGE};
use crate::seeds;

/// Centre and half-range of a uniform draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub half_range: f64,
}

impl Spread {
    const fn new(mean: f64, half_range: f64) -> Self {
        Self { mean, half_range }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        self.mean + self.half_range * rng.random_range(-1.0..=1.0)
    }
}

/// Population-level distribution of one wave's shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavePrior {
    /// Peak amplitude in mV (negative for Q and S).
    pub amplitude_mv: Spread,
    /// Centre relative to the R peak, seconds.
    pub offset_s: Spread,
    /// Gaussian standard deviation, seconds.
    pub width_s: Spread,
}

/// Priors for the P, Q, R, S and T waves, in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphologyPrior {
    pub waves: [WavePrior; 5],
}

impl Default for MorphologyPrior {
    fn default() -> Self {
        let w = |a: (f64, f64), o: (f64, f64), s: (f64, f64)| WavePrior {
            amplitude_mv: Spread::new(a.0, a.1),
            offset_s: Spread::new(o.0, o.1),
            width_s: Spread::new(s.0, s.1),
        };
        Self {
            waves: [
                w((0.20, 0.06), (-0.170, 0.020), (0.022, 0.004)),
                w((-0.18, 0.06), (-0.032, 0.006), (0.009, 0.002)),
                w((1.10, 0.35), (0.0, 0.0), (0.011, 0.002)),
                w((-0.32, 0.10), (0.034, 0.006), (0.010, 0.002)),
                w((0.35, 0.10), (0.270, 0.035), (0.045, 0.008)),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveShape {
    pub amplitude_mv: f64,
    pub offset_s: f64,
    pub width_s: f64,
}

/// One participant's drawn beat template and rhythm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantMorphology {
    pub waves: [WaveShape; 5],
    pub heart_rate_bpm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPopulationConfig {
    pub n_participants: usize,
    pub seed: u64,
    #[serde(default = "default_bpm_range")]
    pub beat_rate_bpm_range: [f64; 2],
    #[serde(default)]
    pub morphology: MorphologyPrior,
    /// Additive white Gaussian noise level relative to the clean signal
    /// power; `None` generates a noiseless trace.
    #[serde(default)]
    pub noise_snr_db: Option<f64>,
    pub duration_s: f64,
    pub sampling_rate_hz: f64,
    /// Fractional per-beat RR jitter (uniform, ±).
    #[serde(default = "default_rr_jitter")]
    pub rr_jitter: f64,
    /// Per-beat fractional amplitude variability (Gaussian sd).
    #[serde(default = "default_beat_amplitude_jitter")]
    pub beat_amplitude_jitter: f64,
    /// Amplitude of a slow respiratory-like baseline drift, mV.
    #[serde(default)]
    pub baseline_wander_mv: f64,
    /// Amplitude of mains interference, mV.
    #[serde(default)]
    pub powerline_mv: f64,
    #[serde(default = "default_powerline_hz")]
    pub powerline_hz: f64,
    /// Couple morphology to gender and age so the demographic tasks have
    /// signal to find.
    #[serde(default = "default_true")]
    pub demographic_effects: bool,
    #[serde(default = "default_source_label")]
    pub source_label: String,
}

fn default_bpm_range() -> [f64; 2] {
    [55.0, 90.0]
}
fn default_rr_jitter() -> f64 {
    0.03
}
fn default_beat_amplitude_jitter() -> f64 {
    0.02
}
fn default_powerline_hz() -> f64 {
    50.0
}
fn default_true() -> bool {
    true
}
fn default_source_label() -> String {
    "synthetic".to_string()
}

impl SyntheticPopulationConfig {
    pub fn new(n_participants: usize, seed: u64, duration_s: f64, sampling_rate_hz: f64) -> Self {
        Self {
            n_participants,
            seed,
            beat_rate_bpm_range: default_bpm_range(),
            morphology: MorphologyPrior::default(),
            noise_snr_db: None,
            duration_s,
            sampling_rate_hz,
            rr_jitter: default_rr_jitter(),
            beat_amplitude_jitter: default_beat_amplitude_jitter(),
            baseline_wander_mv: 0.0,
            powerline_mv: 0.0,
            powerline_hz: default_powerline_hz(),
            demographic_effects: true,
            source_label: default_source_label(),
        }
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.noise_snr_db = Some(snr_db);
        self
    }

    fn validate(&self) -> Result<(), IngestError> {
        if self.n_participants == 0 {
            return Err(IngestError::EmptyPopulation);
        }
        let bad = |m: &str| Err(IngestError::Config(m.to_string()));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be positive");
        }
        if !(self.sampling_rate_hz > 0.0 && self.sampling_rate_hz.is_finite()) {
            return bad("sampling_rate_hz must be positive");
        }
        let [lo, hi] = self.beat_rate_bpm_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad("beat_rate_bpm_range must be a positive interval");
        }
        if !(0.0..0.5).contains(&self.rr_jitter) {
            return bad("rr_jitter must lie in [0, 0.5)");
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return bad("noise_snr_db must be finite");
            }
        }
        Ok(())
    }
}

/// Generator truth for one beat: sample index of each wave centre, when it
/// falls inside the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueBeat {
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub r: usize,
    pub s: Option<usize>,
    pub t: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub participant_id: String,
    pub morphology: ParticipantMorphology,
    pub beats: Vec<TrueBeat>,
}

impl GroundTruth {
    pub fn r_peaks(&self) -> Vec<usize> {
        self.beats.iter().map(|b| b.r).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub records: Vec<EcgRecord>,
    pub truth: Vec<GroundTruth>,
}

/// Generates a deterministic population. Each participant draws from its own
/// RNG stream, so the output does not depend on thread scheduling.
pub fn generate_population(config: &SyntheticPopulationConfig) -> Result<Population, IngestError> {
    config.validate()?;
    let (records, truth) = (0..config.n_participants)
        .into_par_iter()
        .map(|i| generate_participant(config, i))
        .unzip();
    Ok(Population { records, truth })
}

fn generate_participant(cfg: &SyntheticPopulationConfig, index: usize) -> (EcgRecord, GroundTruth) {
    let mut rng = seeds::rng(seeds::derive_indexed(cfg.seed, "synthetic-participant", index as u64));
    let fs = cfg.sampling_rate_hz;
    let n = (cfg.duration_s * fs).round() as usize;

    let gender = if rng.random_bool(0.5) { Gender::Male } else { Gender::Female };
    let age = rng.random_range(MIN_AGE..=MAX_AGE);
    let [lo, hi] = cfg.beat_rate_bpm_range;
    let heart_rate_bpm = lo + (hi - lo) * rng.random::<f64>();

    let mut waves = [WaveShape {
        amplitude_mv: 0.0,
        offset_s: 0.0,
        width_s: 0.0,
    }; 5];
    for (shape, prior) in waves.iter_mut().zip(cfg.morphology.waves.iter()) {
        shape.amplitude_mv = prior.amplitude_mv.draw(&mut rng);
        shape.offset_s = prior.offset_s.draw(&mut rng);
        shape.width_s = prior.width_s.draw(&mut rng).max(1e-3);
    }
    if cfg.demographic_effects {
        apply_demographics(&mut waves, gender, age);
    }
    // Deterministic jitter keeps every participant's template distinct.
    waves[2].amplitude_mv += 1e-4 * index as f64;
    let morphology = ParticipantMorphology { waves, heart_rate_bpm };

    let mean_rr = 60.0 / heart_rate_bpm;
    let amp_noise = Normal::new(0.0, cfg.beat_amplitude_jitter.max(0.0)).expect("finite sd");
    let mut clean = vec![0.0; n];
    let mut beats = Vec::new();
    let mut t_r = 0.25 + 0.5 * mean_rr * rng.random::<f64>();
    let in_range = |t: f64| {
        let i = (t * fs).round();
        (i >= 0.0 && (i as usize) < n).then_some(i as usize)
    };
    while t_r < cfg.duration_s {
        let scale = 1.0 + amp_noise.sample(&mut rng);
        for w in &waves {
            add_gaussian(&mut clean, fs, t_r + w.offset_s, w.width_s, w.amplitude_mv * scale);
        }
        if let Some(r) = in_range(t_r) {
            beats.push(TrueBeat {
                p: in_range(t_r + waves[0].offset_s),
                q: in_range(t_r + waves[1].offset_s),
                r,
                s: in_range(t_r + waves[3].offset_s),
                t: in_range(t_r + waves[4].offset_s),
            });
        }
        t_r += mean_rr * (1.0 + cfg.rr_jitter * rng.random_range(-1.0..=1.0));
    }

    let mut samples = clean.clone();
    if cfg.baseline_wander_mv != 0.0 {
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let f = 0.15 + 0.2 * rng.random::<f64>();
        for (i, v) in samples.iter_mut().enumerate() {
            let t = i as f64 / fs;
            *v += cfg.baseline_wander_mv * (std::f64::consts::TAU * f * t + phase).sin();
        }
    }
    if cfg.powerline_mv != 0.0 {
        for (i, v) in samples.iter_mut().enumerate() {
            let t = i as f64 / fs;
            *v += cfg.powerline_mv * (std::f64::consts::TAU * cfg.powerline_hz * t).sin();
        }
    }
    if let Some(snr_db) = cfg.noise_snr_db {
        let mean = clean.iter().sum::<f64>() / n.max(1) as f64;
        let power = clean.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
        let sd = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        if sd > 0.0 {
            let noise = Normal::new(0.0, sd).expect("finite sd");
            for v in samples.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }

    let participant_id = format!("syn_{index:03}");
    let record = EcgRecord {
        participant_id: participant_id.clone(),
        age,
        gender,
        sampling_rate_hz: fs,
        samples,
        source_label: cfg.source_label.clone(),
    };
    let truth = GroundTruth {
        participant_id,
        morphology,
        beats,
    };
    (record, truth)
}

fn apply_demographics(waves: &mut [WaveShape; 5], gender: Gender, age: u32) {
    let age_dev = (age as f64 - 55.0) / 34.0;
    if gender == Gender::Male {
        waves[2].amplitude_mv *= 1.15;
        waves[3].amplitude_mv *= 1.2;
    } else {
        waves[0].amplitude_mv *= 1.1;
    }
    // Older hearts: slower atrial conduction, flatter T wave.
    waves[0].offset_s -= 0.015 * age_dev;
    waves[4].amplitude_mv *= 1.0 - 0.2 * age_dev;
}

fn add_gaussian(buf: &mut [f64], fs: f64, center_s: f64, width_s: f64, amplitude: f64) {
    let reach = 6.0 * width_s;
    let lo = ((center_s - reach) * fs).floor().max(0.0) as usize;
    let hi = (((center_s + reach) * fs).ceil() as isize).min(buf.len() as isize - 1);
    if hi < lo as isize {
        return;
    }
    let inv = 1.0 / (2.0 * width_s * width_s);
    for (i, v) in buf.iter_mut().enumerate().take(hi as usize + 1).skip(lo) {
        let dt = i as f64 / fs - center_s;
        *v += amplitude * (-dt * dt * inv).exp();
    }
}
