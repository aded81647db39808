use std::collections::BTreeSet;

use super::GciMarks;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakPickConfig {
    /// Minimum magnitude; for negative polarity a peak must satisfy `value <= -threshold`.
    pub threshold: f64,
    pub min_distance_s: f64,
    pub polarity: Polarity,
}

impl PeakPickConfig {
    pub const DEFAULT_MIN_DISTANCE_S: f64 = 0.002;

    pub fn new(threshold: f64, min_distance_s: f64, polarity: Polarity) -> Result<Self> {
        if !(min_distance_s > 0.0) {
            return Err(Error::invalid("min_distance_s must be positive"));
        }
        Ok(Self {
            threshold,
            min_distance_s,
            polarity,
        })
    }
}

/// First difference scaled by the sample rate. `d[i]` belongs to time `(i + 0.5) / fs`.
pub fn derivative(x: &[f64], fs: f64) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::invalid("derivative needs at least 2 samples"));
    }
    Ok(x.windows(2).map(|w| (w[1] - w[0]) * fs).collect())
}

/// Indices of accepted peaks, ascending.
///
/// Candidates are interior local extrema (strict on the left, non-strict on the
/// right, so a plateau reports its first sample). They are visited by
/// decreasing magnitude and kept only if no already-kept peak is closer than
/// the minimum distance.
pub fn find_peak_indices(x: &[f64], fs: f64, cfg: &PeakPickConfig) -> Vec<usize> {
    if x.len() < 3 {
        return Vec::new();
    }
    let sign = match cfg.polarity {
        Polarity::Positive => 1.0,
        Polarity::Negative => -1.0,
    };
    let mut candidates: Vec<(f64, usize)> = (1..x.len() - 1)
        .filter_map(|i| {
            let (l, c, r) = (sign * x[i - 1], sign * x[i], sign * x[i + 1]);
            (c > l && c >= r && c >= cfg.threshold).then_some((c, i))
        })
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let min_gap = (cfg.min_distance_s * fs - 1e-9).ceil().max(1.0) as usize;
    let mut kept = BTreeSet::new();
    for (_, i) in candidates {
        let lo = i.saturating_sub(min_gap - 1);
        if kept.range(lo..i + min_gap).next().is_none() {
            kept.insert(i);
        }
    }
    kept.into_iter().collect()
}

/// Peak times in seconds (`index / fs`).
pub fn find_peaks(x: &[f64], fs: f64, cfg: &PeakPickConfig) -> GciMarks {
    let times = find_peak_indices(x, fs, cfg)
        .into_iter()
        .map(|i| i as f64 / fs)
        .collect();
    GciMarks::from_sorted_unchecked(times)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(threshold: f64, polarity: Polarity) -> PeakPickConfig {
        PeakPickConfig::new(threshold, 0.002, polarity).unwrap()
    }

    #[test]
    fn derivative_definition() {
        assert_eq!(derivative(&[2.0; 5], 100.0).unwrap(), vec![0.0; 4]);
        let ramp: Vec<f64> = (0..6).map(|i| i as f64).collect();
        assert_eq!(derivative(&ramp, 16000.0).unwrap(), vec![16000.0; 5]);
        assert!(derivative(&[1.0], 1.0).is_err());
    }

    #[test]
    fn triangle_train_apexes() {
        let fs = 16000.0;
        let mut x = vec![0.0; 1600];
        let apexes: Vec<usize> = (1..10).map(|k| k * 160).collect();
        for &a in &apexes {
            for (j, v) in x.iter_mut().enumerate() {
                let d = (j as f64 - a as f64).abs();
                *v = f64::max(*v, 1.0 - d / 80.0);
            }
        }
        let m = find_peaks(&x, fs, &cfg(0.5, Polarity::Positive));
        let want: Vec<f64> = apexes.iter().map(|&a| a as f64 / fs).collect();
        assert_eq!(m.times(), &want[..]);
    }

    #[test]
    fn zero_signal_has_no_peaks() {
        assert!(find_peaks(&[0.0; 100], 16000.0, &cfg(0.5, Polarity::Positive)).is_empty());
        assert!(find_peaks(&[0.0; 100], 16000.0, &cfg(0.0, Polarity::Negative)).is_empty());
    }

    #[test]
    fn suppression_keeps_larger_peak() {
        let fs = 16000.0;
        let mut x = vec![0.0; 200];
        x[50] = 0.8;
        x[66] = 0.9; // 1 ms later
        let m = find_peak_indices(&x, fs, &cfg(0.5, Polarity::Positive));
        assert_eq!(m, vec![66]);
    }

    #[test]
    fn negative_polarity_threshold() {
        let mut x = vec![0.0; 200];
        x[40] = -0.6;
        x[120] = -0.4;
        x[160] = 0.9;
        let m = find_peak_indices(&x, 16000.0, &cfg(0.5, Polarity::Negative));
        assert_eq!(m, vec![40]);
    }

    #[test]
    fn exact_min_distance_is_allowed() {
        let mut x = vec![0.0; 200];
        x[50] = 1.0;
        x[82] = 0.9; // exactly 2 ms at 16 kHz
        assert_eq!(find_peak_indices(&x, 16000.0, &cfg(0.5, Polarity::Positive)), vec![50, 82]);
        x[113] = 0.95; // 31 samples after 82
        assert_eq!(find_peak_indices(&x, 16000.0, &cfg(0.5, Polarity::Positive)), vec![50, 113]);
    }

    #[test]
    fn config_validation() {
        assert!(PeakPickConfig::new(0.5, 0.0, Polarity::Positive).is_err());
    }
}
