//! Second-order-section IIR filters and forward-backward application.

use std::f64::consts::PI;

use super::FilterError;

/// One normalised section, `a0 == 1`. First-order sections use `b2 = a2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn normalized(b: [f64; 3], a: [f64; 3]) -> Self {
        Self {
            b0: b[0] / a[0],
            b1: b[1] / a[0],
            b2: b[2] / a[0],
            a1: a[1] / a[0],
            a2: a[2] / a[0],
        }
    }

    /// Largest pole radius.
    fn pole_radius(&self) -> f64 {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc < 0.0 {
            self.a2.sqrt()
        } else {
            let s = disc.sqrt();
            ((-self.a1 + s) / 2.0).abs().max(((-self.a1 - s) / 2.0).abs())
        }
    }

    /// Direct-form-II-transposed state that makes a constant input `u`
    /// produce its steady-state output from the first sample on.
    fn steady_state(&self, u: f64) -> (f64, f64) {
        let den = 1.0 + self.a1 + self.a2;
        let y = if den.abs() < 1e-300 { 0.0 } else { (self.b0 + self.b1 + self.b2) / den * u };
        let z2 = self.b2 * u - self.a2 * y;
        let z1 = y - self.b0 * u;
        (z1, z2)
    }

    fn run(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let (mut z1, mut z2) = self.steady_state(first);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b0 * input + z1;
            z1 = self.b1 * input - self.a1 * y + z2;
            z2 = self.b2 * input - self.a2 * y;
            *v = y;
        }
    }

    fn response(&self, omega: f64) -> (f64, f64) {
        let (c1, s1) = (omega.cos(), -omega.sin());
        let (c2, s2) = ((2.0 * omega).cos(), -(2.0 * omega).sin());
        let num = (self.b0 + self.b1 * c1 + self.b2 * c2, self.b1 * s1 + self.b2 * s2);
        let den = (1.0 + self.a1 * c1 + self.a2 * c2, self.a1 * s1 + self.a2 * s2);
        let d = den.0 * den.0 + den.1 * den.1;
        ((num.0 * den.0 + num.1 * den.1) / d, (num.1 * den.0 - num.0 * den.1) / d)
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

fn check_frequency(name: &str, f: f64, fs: f64) -> Result<(), FilterError> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(FilterError::Config(format!("sampling rate must be positive, got {fs}")));
    }
    if !(f.is_finite() && f > 0.0 && f < fs / 2.0) {
        return Err(FilterError::Config(format!(
            "{name} {f} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            fs / 2.0
        )));
    }
    Ok(())
}

impl Sos {
    /// Butterworth highpass via bilinear transform prewarped at the cutoff.
    pub fn butterworth_highpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Self, FilterError> {
        Self::butterworth(order, cutoff_hz, fs, true)
    }

    pub fn butterworth_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Self, FilterError> {
        Self::butterworth(order, cutoff_hz, fs, false)
    }

    fn butterworth(order: usize, cutoff_hz: f64, fs: f64, highpass: bool) -> Result<Self, FilterError> {
        check_frequency("cutoff", cutoff_hz, fs)?;
        if order == 0 {
            return Err(FilterError::Config("filter order must be at least 1".into()));
        }
        let w0 = 2.0 * PI * cutoff_hz / fs;
        let (sin, cos) = w0.sin_cos();
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for k in 0..order / 2 {
            let q = 1.0 / (2.0 * ((2 * k + 1) as f64 * PI / (2 * order) as f64).sin());
            let alpha = sin / (2.0 * q);
            let b = if highpass {
                [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0]
            } else {
                [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0]
            };
            sections.push(Biquad::normalized(b, [1.0 + alpha, -2.0 * cos, 1.0 - alpha]));
        }
        if order % 2 == 1 {
            let k = (w0 / 2.0).tan();
            let b = if highpass { [1.0, -1.0, 0.0] } else { [k, k, 0.0] };
            sections.push(Biquad::normalized(b, [1.0 + k, k - 1.0, 0.0]));
        }
        Ok(Self { sections })
    }

    /// Second-order notch with quality factor `q` (centre / -3 dB bandwidth).
    pub fn notch(center_hz: f64, q: f64, fs: f64) -> Result<Self, FilterError> {
        check_frequency("notch frequency", center_hz, fs)?;
        if !(q.is_finite() && q > 0.0) {
            return Err(FilterError::Config(format!("notch quality must be positive, got {q}")));
        }
        let w0 = 2.0 * PI * center_hz / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        Ok(Self {
            sections: vec![Biquad::normalized(
                [1.0, -2.0 * cos, 1.0],
                [1.0 + alpha, -2.0 * cos, 1.0 - alpha],
            )],
        })
    }

    /// Complex gain magnitude of a single causal pass at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, fs: f64) -> f64 {
        let omega = 2.0 * PI * freq_hz / fs;
        let (mut re, mut im) = (1.0, 0.0);
        for s in &self.sections {
            let (r, i) = s.response(omega);
            (re, im) = (re * r - im * i, re * i + im * r);
        }
        (re * re + im * im).sqrt()
    }

    /// Samples until the slowest pole has decayed to 1 % of its initial value.
    pub fn settle_len(&self) -> usize {
        let r = self
            .sections
            .iter()
            .map(Biquad::pole_radius)
            .fold(0.0_f64, f64::max);
        if r <= 0.0 {
            return 1;
        }
        if r >= 1.0 {
            return usize::MAX / 4;
        }
        ((0.01_f64).ln() / r.ln()).ceil().max(1.0) as usize
    }

    /// Causal pass with steady-state initial conditions.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.filter_in_place(&mut y);
        y
    }

    fn filter_in_place(&self, y: &mut [f64]) {
        for s in &self.sections {
            s.run(y);
        }
    }

    /// Zero-phase forward-backward application.
    ///
    /// Edges are extended by even reflection over three settle lengths
    /// (capped at `len - 1`), and each pass starts from steady state.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = self.settle_len().saturating_mul(3).min(n - 1);
        let mut buf = Vec::with_capacity(n + 2 * pad);
        buf.extend(x[1..=pad].iter().rev());
        buf.extend_from_slice(x);
        buf.extend(x[n - 1 - pad..n - 1].iter().rev());

        self.filter_in_place(&mut buf);
        buf.reverse();
        self.filter_in_place(&mut buf);
        buf.reverse();
        buf[pad..pad + n].to_vec()
    }
}
