//! GCI detection metrics over larynx-cycle windows: identification, miss and
//! false-alarm rates and identification accuracy.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::GciMarks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalVariant {
    /// Only cycles whose both neighboring periods fall in the f0 band.
    VoicedRestricted,
    /// Every reference GCI; stray detections count as false alarms.
    AllGcis,
}

impl std::str::FromStr for EvalVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voiced" | "voiced_restricted" => Ok(EvalVariant::VoicedRestricted),
            "all" | "all_gcis" => Ok(EvalVariant::AllGcis),
            other => Err(Error::invalid(format!("unknown evaluation mode {other:?} (expected voiced or all)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMode {
    pub variant: EvalVariant,
    pub f0_band: (f64, f64),
    pub edge_half_window_s: f64,
}

impl EvalMode {
    pub fn voiced() -> Self {
        Self {
            variant: EvalVariant::VoicedRestricted,
            f0_band: (50.0, 500.0),
            edge_half_window_s: 0.010,
        }
    }

    pub fn all() -> Self {
        Self {
            variant: EvalVariant::AllGcis,
            ..Self::voiced()
        }
    }

    pub fn from_variant(variant: EvalVariant) -> Self {
        Self { variant, ..Self::voiced() }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.f0_band;
        if !(0.0 < lo && lo < hi) {
            return Err(Error::invalid(format!("f0 band [{lo}, {hi}] must satisfy 0 < low < high")));
        }
        if !(self.edge_half_window_s > 0.0) {
            return Err(Error::invalid("edge half-window must be positive"));
        }
        Ok(())
    }
}

/// Larynx cycle around one reference GCI, as the half-open `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleWindow {
    pub center: f64,
    pub start: f64,
    pub end: f64,
    pub kept: bool,
}

pub fn cycle_windows(reference: &GciMarks, mode: &EvalMode) -> Vec<CycleWindow> {
    let t = reference.times();
    let (min_gap, max_gap) = (1.0 / mode.f0_band.1, 1.0 / mode.f0_band.0);
    let eps = 1e-12;
    (0..t.len())
        .map(|k| {
            let left = (k > 0).then(|| t[k] - t[k - 1]);
            let right = t.get(k + 1).map(|&n| n - t[k]);
            match mode.variant {
                EvalVariant::VoicedRestricted => {
                    let in_band = |g: Option<f64>| g.is_some_and(|g| g >= min_gap - eps && g <= max_gap + eps);
                    CycleWindow {
                        center: t[k],
                        start: t[k] - left.unwrap_or(0.0) / 2.0,
                        end: t[k] + right.unwrap_or(0.0) / 2.0,
                        kept: in_band(left) && in_band(right),
                    }
                }
                EvalVariant::AllGcis => {
                    let half = |g: Option<f64>| g.map_or(mode.edge_half_window_s, |g| (g / 2.0).min(mode.edge_half_window_s));
                    CycleWindow {
                        center: t[k],
                        start: t[k] - half(left),
                        end: t[k] + half(right),
                        kept: true,
                    }
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalVariant,
    /// Evaluated reference cycles.
    pub n_ref: usize,
    pub n_identified: usize,
    pub n_missed: usize,
    /// Cycles with more than one detection.
    pub n_multiple: usize,
    /// FAR numerator: multi-detection cycles in voiced-restricted mode,
    /// detections not uniquely identifying a cycle in all-GCIs mode.
    pub n_false: usize,
    pub idr: f64,
    pub mr: f64,
    pub far: f64,
    /// Population standard deviation of identification errors, in ms.
    pub ida_ms: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors_s: Vec<f64>,
}

impl EvalReport {
    fn from_counts(
        mode: EvalVariant,
        n_ref: usize,
        n_identified: usize,
        n_missed: usize,
        n_multiple: usize,
        n_false: usize,
        errors_s: Vec<f64>,
    ) -> Result<Self> {
        if n_ref == 0 {
            return Err(Error::invalid("no reference cycles to evaluate"));
        }
        let pct = |c: usize| 100.0 * c as f64 / n_ref as f64;
        Ok(Self {
            mode,
            n_ref,
            n_identified,
            n_missed,
            n_multiple,
            n_false,
            idr: pct(n_identified),
            mr: pct(n_missed),
            far: pct(n_false),
            ida_ms: 1000.0 * population_std(&errors_s),
            errors_s,
        })
    }

    /// Mean identification error in ms.
    pub fn bias_ms(&self) -> f64 {
        if self.errors_s.is_empty() {
            0.0
        } else {
            1000.0 * self.errors_s.iter().sum::<f64>() / self.errors_s.len() as f64
        }
    }
}

fn population_std(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

pub fn evaluate(reference: &GciMarks, detected: &GciMarks, mode: &EvalMode) -> Result<EvalReport> {
    mode.validate()?;
    let det = detected.times();
    let mut n_ref = 0;
    let (mut n_identified, mut n_missed, mut n_multiple) = (0, 0, 0);
    let mut errors = Vec::new();
    for w in cycle_windows(reference, mode).into_iter().filter(|w| w.kept) {
        n_ref += 1;
        let lo = det.partition_point(|&d| d < w.start);
        let hi = det.partition_point(|&d| d < w.end);
        match hi - lo {
            0 => n_missed += 1,
            1 => {
                n_identified += 1;
                errors.push(det[lo] - w.center);
            }
            _ => n_multiple += 1,
        }
    }
    let n_false = match mode.variant {
        EvalVariant::VoicedRestricted => n_multiple,
        EvalVariant::AllGcis => det.len() - n_identified,
    };
    EvalReport::from_counts(mode.variant, n_ref, n_identified, n_missed, n_multiple, n_false, errors)
}

/// Pools per-file reports: counts are summed and rates recomputed.
pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or_else(|| Error::invalid("no reports to aggregate"))?;
    if reports.iter().any(|r| r.mode != first.mode) {
        return Err(Error::invalid("cannot pool reports from different evaluation modes"));
    }
    let sum = |f: fn(&EvalReport) -> usize| reports.iter().map(f).sum::<usize>();
    let errors = reports.iter().flat_map(|r| r.errors_s.iter().copied()).collect();
    EvalReport::from_counts(
        first.mode,
        sum(|r| r.n_ref),
        sum(|r| r.n_identified),
        sum(|r| r.n_missed),
        sum(|r| r.n_multiple),
        sum(|r| r.n_false),
        errors,
    )
}

/// Plain-text table with one row per labelled report.
pub fn format_table(rows: &[(&str, &EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(4);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>8}  {:>7}",
        "name", "IDR(%)", "MR(%)", "FAR(%)", "IDA(ms)", "cycles"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>8.3}  {:>7}",
            name, r.idr, r.mr, r.far, r.ida_ms, r.n_ref
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marks(t: &[f64]) -> GciMarks {
        GciMarks::new(t.to_vec()).unwrap()
    }

    #[test]
    fn regular_refs_window_selection() {
        let r = marks(&[0.10, 0.11, 0.12, 0.13, 0.14]);
        let v = cycle_windows(&r, &EvalMode::voiced());
        assert_eq!(v.iter().map(|w| w.kept).collect::<Vec<_>>(), [false, true, true, true, false]);
        assert!(cycle_windows(&r, &EvalMode::all()).iter().all(|w| w.kept));
        assert!((v[2].start - 0.115).abs() < 1e-12 && (v[2].end - 0.125).abs() < 1e-12);
    }

    #[test]
    fn isolated_and_long_gap_refs() {
        let one = cycle_windows(&marks(&[0.5]), &EvalMode::voiced());
        assert!(!one[0].kept);
        let all = cycle_windows(&marks(&[0.5]), &EvalMode::all());
        assert!(all[0].kept && (all[0].start - 0.49).abs() < 1e-12 && (all[0].end - 0.51).abs() < 1e-12);
        let w = cycle_windows(&marks(&[0.10, 0.11, 0.135, 0.145]), &EvalMode::voiced());
        assert!(!w[1].kept);
    }

    #[test]
    fn perfect_and_shifted_detection() {
        let r = marks(&[0.10, 0.11, 0.12, 0.13, 0.14]);
        for mode in [EvalMode::voiced(), EvalMode::all()] {
            let p = evaluate(&r, &r, &mode).unwrap();
            assert_eq!((p.idr, p.mr, p.far, p.ida_ms), (100.0, 0.0, 0.0, 0.0));
            let s = evaluate(&r, &r.shifted(0.0005), &mode).unwrap();
            assert_eq!(s.idr, 100.0);
            assert!(s.ida_ms < 1e-9);
            assert!((s.bias_ms() - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn one_of_each_outcome() {
        let r = marks(&[0.10, 0.11, 0.12, 0.13, 0.14]);
        let d = marks(&[0.1101, 0.1195, 0.1205]);
        let rep = evaluate(&r, &d, &EvalMode::voiced()).unwrap();
        assert_eq!((rep.n_identified, rep.n_missed, rep.n_false), (1, 1, 1));
        assert!((rep.idr - 100.0 / 3.0).abs() < 1e-9);
        assert!((rep.idr + rep.mr + rep.far - 100.0).abs() < 1e-9);
    }

    #[test]
    fn strays_count_in_all_mode() {
        let r: Vec<f64> = (0..10).map(|k| 0.1 + 0.01 * k as f64).collect();
        let mut d = r.clone();
        d.extend([0.5, 0.6, 0.7, 0.8, 0.9]);
        let rep = evaluate(&marks(&r), &marks(&d), &EvalMode::all()).unwrap();
        assert_eq!((rep.idr, rep.mr, rep.far), (100.0, 0.0, 50.0));
        let voiced = evaluate(&marks(&r), &marks(&d), &EvalMode::voiced()).unwrap();
        assert_eq!(voiced.far, 0.0);
    }

    #[test]
    fn pooling() {
        let r: Vec<f64> = (0..12).map(|k| 0.1 + 0.01 * k as f64).collect();
        let good = evaluate(&marks(&r), &marks(&r), &EvalMode::voiced()).unwrap();
        let bad = evaluate(&marks(&r), &GciMarks::empty(), &EvalMode::voiced()).unwrap();
        assert_eq!(good.n_ref, 10);
        assert_eq!(aggregate(&[good.clone(), bad]).unwrap().idr, 50.0);
        assert_eq!(aggregate(std::slice::from_ref(&good)).unwrap(), good);
        assert!(aggregate(&[]).is_err());
        assert!(evaluate(&GciMarks::empty(), &GciMarks::empty(), &EvalMode::all()).is_err());
    }

    #[test]
    fn table_has_all_rows() {
        let r = marks(&[0.10, 0.11, 0.12]);
        let rep = evaluate(&r, &r, &EvalMode::voiced()).unwrap();
        let t = format_table(&[("file_a", &rep), ("total", &rep)]);
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("IDR(%)") && t.contains("100.00"));
    }
}
