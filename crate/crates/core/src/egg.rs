//! Reference GCIs from electroglottograph (EGG) channels: zero-phase band
//! limiting, differentiation and relative-threshold negative peak picking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{
    butter_design, derivative, filtfilt, find_peak_indices, AudioBuffer, FilterKind, GciMarks, PeakPickConfig,
    Polarity, SosFilter,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EggConfig {
    pub hp_cutoff: f64,
    pub lp_cutoff: f64,
    pub filter_order: usize,
    pub peak_threshold_rel: f64,
    pub min_distance_s: f64,
}

impl Default for EggConfig {
    fn default() -> Self {
        Self {
            hp_cutoff: 30.0,
            lp_cutoff: 500.0,
            filter_order: 5,
            peak_threshold_rel: 0.2,
            min_distance_s: PeakPickConfig::DEFAULT_MIN_DISTANCE_S,
        }
    }
}

impl EggConfig {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if !(0.0 < self.hp_cutoff && self.hp_cutoff < self.lp_cutoff && self.lp_cutoff < fs / 2.0) {
            return Err(Error::invalid(format!(
                "need 0 < hp ({}) < lp ({}) < fs/2 ({})",
                self.hp_cutoff,
                self.lp_cutoff,
                fs / 2.0
            )));
        }
        if self.filter_order == 0 {
            return Err(Error::invalid("filter order must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.peak_threshold_rel) {
            return Err(Error::invalid("relative peak threshold must be in [0, 1)"));
        }
        if !(self.min_distance_s > 0.0) {
            return Err(Error::invalid("minimum peak distance must be positive"));
        }
        Ok(())
    }

    fn filters(&self, fs: f64) -> Result<(SosFilter, SosFilter)> {
        self.validate(fs)?;
        Ok((
            butter_design(self.filter_order, self.hp_cutoff, FilterKind::Highpass, fs)?,
            butter_design(self.filter_order, self.lp_cutoff, FilterKind::Lowpass, fs)?,
        ))
    }
}

/// Zero-phase highpass followed by zero-phase lowpass.
pub fn preprocess_egg(egg: &AudioBuffer, cfg: &EggConfig) -> Result<AudioBuffer> {
    let (hp, lp) = cfg.filters(egg.fs())?;
    filtfilt(&lp, &filtfilt(&hp, egg)?)
}

/// Negative peaks of the derivative of the preprocessed EGG.
///
/// The threshold is `peak_threshold_rel` times the largest negative
/// derivative value. Each derivative sample sits between two input samples,
/// so marks are placed half a sample after the picked index. A flat signal
/// yields no marks.
pub fn extract_gci_from_egg(egg: &AudioBuffer, cfg: &EggConfig) -> Result<GciMarks> {
    let fs = egg.fs();
    let filtered = preprocess_egg(egg, cfg)?;
    let d = derivative(filtered.samples(), fs)?;
    let strongest = d.iter().fold(0.0f64, |m, &v| m.max(-v));
    if strongest <= 1e-6 * fs * egg.peak() || strongest == 0.0 {
        log::warn!("EGG signal is flat; no GCIs extracted");
        return Ok(GciMarks::empty());
    }
    let pick = PeakPickConfig::new(cfg.peak_threshold_rel * strongest, cfg.min_distance_s, Polarity::Negative)?;
    let times = find_peak_indices(&d, fs, &pick)
        .into_iter()
        .map(|i| (i as f64 + 0.5) / fs)
        .collect();
    GciMarks::new(times)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        EggConfig::default().validate(16000.0).unwrap();
        let bad = EggConfig { hp_cutoff: 600.0, ..Default::default() };
        assert!(bad.validate(16000.0).is_err());
        let bad = EggConfig { lp_cutoff: 9000.0, ..Default::default() };
        assert!(bad.validate(16000.0).is_err());
    }

    #[test]
    fn silent_input_gives_no_marks() {
        let z = AudioBuffer::zeros(4000, 16000);
        assert!(preprocess_egg(&z, &EggConfig::default()).unwrap().samples().iter().all(|&v| v == 0.0));
        assert!(extract_gci_from_egg(&z, &EggConfig::default()).unwrap().is_empty());
    }
}
