//! IIR design and application on cascaded second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::AudioBuffer;
use crate::error::{Error, Result};

/// One second-order section `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    /// Poles strictly inside the unit circle (stability triangle test).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }

    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    fn scale_numerator(&mut self, g: f64) {
        self.b0 *= g;
        self.b1 *= g;
        self.b2 *= g;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Lowpass,
    Highpass,
}

/// Cascade of stable second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    sections: Vec<Biquad>,
}

impl SosFilter {
    pub fn new(sections: Vec<Biquad>) -> Result<Self> {
        if sections.is_empty() {
            return Err(Error::invalid("filter needs at least one section"));
        }
        if let Some(i) = sections.iter().position(|s| !s.is_stable()) {
            return Err(Error::invalid(format!("section {i} has poles on or outside the unit circle")));
        }
        Ok(Self { sections })
    }

    pub fn identity() -> Self {
        Self {
            sections: vec![Biquad::IDENTITY],
        }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Series connection: `self` followed by `other`.
    pub fn then(mut self, other: &SosFilter) -> Self {
        self.sections.extend_from_slice(&other.sections);
        self
    }

    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let omega = 2.0 * PI * freq_hz / fs;
        self.sections.iter().map(|s| s.response(omega)).product()
    }

    pub fn magnitude(&self, freq_hz: f64, fs: f64) -> f64 {
        self.response(freq_hz, fs).norm()
    }

    /// Section states that reproduce the steady-state response to a unit step.
    fn step_state(&self) -> Vec<[f64; 2]> {
        let mut level = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let g = s.dc_gain();
                let y = level * g;
                let z2 = (s.b2 - s.a2 * g) * level;
                let z1 = y - s.b0 * level;
                level = y;
                [z1, z2]
            })
            .collect()
    }

    /// Causal filtering from zero initial state.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut state = vec![[0.0; 2]; self.sections.len()];
        let mut y = x.to_vec();
        self.run(&mut y, &mut state);
        y
    }

    fn run(&self, data: &mut [f64], state: &mut [[f64; 2]]) {
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            let [mut z1, mut z2] = *z;
            for v in data.iter_mut() {
                let x = *v;
                let y = s.b0 * x + z1;
                z1 = s.b1 * x - s.a1 * y + z2;
                z2 = s.b2 * x - s.a2 * y;
                *v = y;
            }
            *z = [z1, z2];
        }
    }

    /// Causal pass started from the step steady state scaled by the first sample.
    fn run_primed(&self, data: &mut [f64], step: &[[f64; 2]]) {
        let x0 = data.first().copied().unwrap_or(0.0);
        let mut state: Vec<[f64; 2]> = step.iter().map(|[a, b]| [a * x0, b * x0]).collect();
        self.run(data, &mut state);
    }

    fn forward_backward(&self, data: &mut [f64], step: &[[f64; 2]]) {
        self.run_primed(data, step);
        data.reverse();
        self.run_primed(data, step);
        data.reverse();
    }

    pub fn pad_len(&self) -> usize {
        3 * 2 * self.sections.len()
    }
}

/// Butterworth design by bilinear transform with cutoff pre-warping.
pub fn butter_design(order: usize, cutoff_hz: f64, kind: FilterKind, fs: f64) -> Result<SosFilter> {
    if order == 0 {
        return Err(Error::invalid("filter order must be at least 1"));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
        return Err(Error::invalid(format!(
            "cutoff {cutoff_hz} Hz outside (0, {}) Hz",
            fs / 2.0
        )));
    }
    let warped = 2.0 * fs * (PI * cutoff_hz / fs).tan();
    let to_z = |s: Complex64| (2.0 * fs + s) / (2.0 * fs - s);
    let n = order as f64;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for k in 1..=order / 2 {
        let theta = PI * (2.0 * k as f64 + n - 1.0) / (2.0 * n);
        let z = to_z(warped * Complex64::from_polar(1.0, theta));
        let (b1, norm_at) = match kind {
            FilterKind::Lowpass => (2.0, 1.0),
            FilterKind::Highpass => (-2.0, -1.0),
        };
        let mut bq = Biquad {
            b0: 1.0,
            b1,
            b2: 1.0,
            a1: -2.0 * z.re,
            a2: z.norm_sqr(),
        };
        let g = (1.0 + bq.a1 * norm_at + bq.a2) / (bq.b0 + bq.b1 * norm_at + bq.b2);
        bq.scale_numerator(g);
        sections.push(bq);
    }
    if order % 2 == 1 {
        let p = to_z(Complex64::new(-warped, 0.0)).re;
        let (b1, norm_at) = match kind {
            FilterKind::Lowpass => (1.0, 1.0),
            FilterKind::Highpass => (-1.0, -1.0),
        };
        let mut bq = Biquad {
            b0: 1.0,
            b1,
            b2: 0.0,
            a1: -p,
            a2: 0.0,
        };
        let g = (1.0 + bq.a1 * norm_at) / (bq.b0 + bq.b1 * norm_at);
        bq.scale_numerator(g);
        sections.push(bq);
    }
    SosFilter::new(sections)
}

fn odd_extend(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    ext
}

/// Zero-phase filtering of a raw sequence; see [`filtfilt`].
pub fn filtfilt_slice(filter: &SosFilter, x: &[f64]) -> Result<Vec<f64>> {
    let pad = filter.pad_len();
    if x.len() <= pad {
        return Err(Error::invalid(format!(
            "input of {} samples is too short for filtfilt padding of {pad}",
            x.len()
        )));
    }
    let step = filter.step_state();
    let ext = odd_extend(x, pad);

    // Forward-then-backward and backward-then-forward differ only in how the
    // edges settle; averaging both makes the result exactly reversal-symmetric.
    let mut fb = ext.clone();
    filter.forward_backward(&mut fb, &step);
    let mut bf = ext;
    bf.reverse();
    filter.forward_backward(&mut bf, &step);
    bf.reverse();

    Ok(fb[pad..pad + x.len()]
        .iter()
        .zip(&bf[pad..pad + x.len()])
        .map(|(a, b)| 0.5 * (a + b))
        .collect())
}

/// Zero-phase forward-backward filtering with odd-reflection edge padding.
pub fn filtfilt(filter: &SosFilter, x: &AudioBuffer) -> Result<AudioBuffer> {
    let y = filtfilt_slice(filter, x.samples())?;
    Ok(AudioBuffer::from_parts_unchecked(y, x.sample_rate()))
}

/// Zero-phase anti-alias lowpass followed by integer downsampling.
pub fn decimate(x: &AudioBuffer, factor: usize) -> Result<AudioBuffer> {
    if factor < 2 {
        return Err(Error::invalid("decimation factor must be at least 2"));
    }
    let rate = x.sample_rate() as usize;
    if rate % factor != 0 {
        return Err(Error::invalid(format!(
            "sample rate {rate} Hz is not divisible by {factor}"
        )));
    }
    let out_rate = rate / factor;
    let lp = butter_design(8, 0.45 * out_rate as f64 / 2.0, FilterKind::Lowpass, x.fs())?;
    let filtered = filtfilt_slice(&lp, x.samples())?;
    let n = x.len() / factor;
    let y = filtered.iter().step_by(factor).take(n).copied().collect();
    Ok(AudioBuffer::from_parts_unchecked(y, out_rate as u32))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 16000.0;

    #[test]
    fn dc_gains() {
        for order in 1..=8 {
            let lp = butter_design(order, 500.0, FilterKind::Lowpass, FS).unwrap();
            let hp = butter_design(order, 30.0, FilterKind::Highpass, FS).unwrap();
            assert!((lp.magnitude(0.0, FS) - 1.0).abs() < 1e-9, "order {order}");
            assert!(hp.magnitude(0.0, FS).abs() < 1e-9, "order {order}");
            assert_eq!(lp.sections().len(), order.div_ceil(2));
        }
    }

    #[test]
    fn cutoff_is_half_power() {
        for order in 1..=8 {
            for kind in [FilterKind::Lowpass, FilterKind::Highpass] {
                let f = butter_design(order, 500.0, kind, FS).unwrap();
                assert!((f.magnitude(500.0, FS) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn design_rejects_bad_cutoff() {
        assert!(butter_design(5, 0.0, FilterKind::Lowpass, FS).is_err());
        assert!(butter_design(5, 8000.0, FilterKind::Lowpass, FS).is_err());
        assert!(butter_design(0, 100.0, FilterKind::Lowpass, FS).is_err());
    }

    #[test]
    fn magnitude_is_monotone() {
        for order in 1..=8 {
            for (kind, fc) in [(FilterKind::Lowpass, 500.0), (FilterKind::Highpass, 30.0)] {
                let f = butter_design(order, fc, kind, FS).unwrap();
                let mags: Vec<f64> = (0..512).map(|i| f.magnitude(i as f64 * FS / 2.0 / 511.0, FS)).collect();
                for w in mags.windows(2) {
                    match kind {
                        FilterKind::Lowpass => assert!(w[1] <= w[0] + 1e-12),
                        FilterKind::Highpass => assert!(w[1] >= w[0] - 1e-12),
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_unstable_sections() {
        let bad = Biquad {
            a2: 1.0,
            ..Biquad::IDENTITY
        };
        assert!(SosFilter::new(vec![bad]).is_err());
    }

    #[test]
    fn identity_filtfilt_keeps_impulse() {
        let mut x = vec![0.0; 64];
        x[20] = 1.0;
        let y = filtfilt_slice(&SosFilter::identity(), &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn filtfilt_too_short() {
        let f = butter_design(5, 500.0, FilterKind::Lowpass, FS).unwrap();
        assert!(filtfilt_slice(&f, &[0.0; 18]).is_err());
        assert!(filtfilt_slice(&f, &[0.0; 19]).is_ok());
    }

    #[test]
    fn filtfilt_preserves_dc_through_lowpass() {
        let f = butter_design(8, 1800.0, FilterKind::Lowpass, 32000.0).unwrap();
        let y = filtfilt_slice(&f, &[0.3; 400]).unwrap();
        assert!(y.iter().all(|v| (v - 0.3).abs() < 1e-9));
    }

    #[test]
    fn decimate_contracts() {
        let x = AudioBuffer::new(vec![0.3; 32001], 32000).unwrap();
        let y = decimate(&x, 2).unwrap();
        assert_eq!(y.sample_rate(), 16000);
        assert_eq!(y.len(), 16000);
        assert!(y.samples().iter().all(|v| (v - 0.3).abs() < 1e-6));
        assert!(decimate(&AudioBuffer::zeros(100, 44100), 8).is_err());
        assert!(decimate(&AudioBuffer::zeros(100, 44100), 1).is_err());
    }
}
