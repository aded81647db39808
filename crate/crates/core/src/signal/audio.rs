use crate::error::{Error, Result};

/// Mono sample sequence at a fixed rate. Sample `i` sits at time `i / sample_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn fs(&self) -> f64 {
        f64::from(self.sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    /// Applies `f` to every sample. Panics if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let samples: Vec<f64> = self.samples.iter().map(|&s| f(s)).collect();
        assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn from_parts_unchecked(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate,
        }
    }
}

/// Scales `audio` so that its maximum absolute sample equals `10^(level_db / 20)`.
pub fn normalize_peak(audio: &AudioBuffer, level_db: f64) -> Result<AudioBuffer> {
    if audio.is_empty() {
        return Err(Error::invalid("cannot normalize an empty buffer"));
    }
    let peak = audio.peak();
    if peak == 0.0 {
        return Err(Error::invalid("cannot normalize an all-zero buffer"));
    }
    let target = 10f64.powf(level_db / 20.0);
    let gain = target / peak;
    if gain == 1.0 {
        return Ok(audio.clone());
    }
    let samples: Vec<f64> = audio.samples.iter().map(|s| s * gain).collect();
    Ok(AudioBuffer::from_parts_unchecked(samples, audio.sample_rate))
}
