//! Regression target curves: GCI-apexed triangles and per-period normalized
//! glottal flow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lf::PeriodSpan;
use crate::signal::{AudioBuffer, GciMarks};

/// Longest inter-GCI gap still treated as one glottal period.
pub const MAX_PERIOD_S: f64 = 0.020;
/// Period assumed for GCIs without a usable neighbor.
pub const FALLBACK_PERIOD_S: f64 = 0.010;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Triangle,
    GlottalFlow,
}

impl std::str::FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tri" | "triangle" => Ok(TargetKind::Triangle),
            "gf" | "glottal_flow" | "glottal-flow" => Ok(TargetKind::GlottalFlow),
            other => Err(Error::invalid(format!("unknown target kind {other:?} (expected tri or gf)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetCurve {
    pub values: Vec<f64>,
    pub sample_rate: u32,
    pub kind: TargetKind,
}

impl TargetCurve {
    pub fn to_audio(&self) -> AudioBuffer {
        AudioBuffer::from_parts_unchecked(self.values.clone(), self.sample_rate)
    }
}

/// Triangle train peaking at 1 on each GCI and reaching 0 half a period away.
///
/// Apexes are snapped to the nearest sample. Left and right periods are the
/// gaps to the neighboring GCIs when those are at most 20 ms; otherwise the
/// other side's gap is borrowed, and a GCI with no usable neighbor gets 10 ms.
/// Overlapping ramps combine by pointwise maximum.
pub fn triangle_target(gci: &GciMarks, length: usize, fs: u32) -> Result<TargetCurve> {
    let fsf = f64::from(fs);
    let duration = length as f64 / fsf;
    if let Some(t) = gci.times().iter().find(|&&t| t < 0.0 || t >= duration) {
        return Err(Error::invalid(format!("GCI at {t} s outside [0, {duration}) s")));
    }
    let apex: Vec<usize> = gci
        .times()
        .iter()
        .map(|t| ((t * fsf).round() as usize).min(length.saturating_sub(1)))
        .collect();
    let max_gap = MAX_PERIOD_S * fsf;
    let gap = |a: usize, b: usize| -> Option<f64> {
        let g = b as f64 - a as f64;
        (g > 0.0 && g <= max_gap + 1e-9).then_some(g)
    };
    let mut values = vec![0.0; length];
    for (k, &a) in apex.iter().enumerate() {
        let left = if k > 0 { gap(apex[k - 1], a) } else { None };
        let right = apex.get(k + 1).and_then(|&b| gap(a, b));
        let fallback = FALLBACK_PERIOD_S * fsf;
        let half_l = left.or(right).unwrap_or(fallback) / 2.0;
        let half_r = right.or(left).unwrap_or(fallback) / 2.0;

        let lo = a.saturating_sub(half_l.ceil() as usize);
        for (n, v) in values.iter_mut().enumerate().take(a + 1).skip(lo) {
            let y = 1.0 - (a - n) as f64 / half_l;
            *v = f64::max(*v, y.max(0.0));
        }
        let hi = (a + half_r.ceil() as usize).min(length - 1);
        for (n, v) in values.iter_mut().enumerate().take(hi + 1).skip(a + 1) {
            let y = 1.0 - (n - a) as f64 / half_r;
            *v = f64::max(*v, y.max(0.0));
        }
    }
    Ok(TargetCurve {
        values,
        sample_rate: fs,
        kind: TargetKind::Triangle,
    })
}

/// Glottal flow divided, period by period, by that period's maximum.
pub fn glottal_flow_target(flow: &AudioBuffer, periods: &[PeriodSpan]) -> Result<TargetCurve> {
    let x = flow.samples();
    let mut values = vec![0.0; x.len()];
    for p in periods {
        if p.end() > x.len() || p.te_index >= p.len {
            return Err(Error::invalid(format!(
                "period [{}, {}) does not fit a flow of {} samples",
                p.start,
                p.end(),
                x.len()
            )));
        }
        let seg = &x[p.start..p.end()];
        let max = seg.iter().cloned().fold(0.0, f64::max);
        if max < 1e-6 {
            continue;
        }
        for (v, &f) in values[p.start..p.end()].iter_mut().zip(seg) {
            *v = (f / max).clamp(0.0, 1.0);
        }
    }
    Ok(TargetCurve {
        values,
        sample_rate: flow.sample_rate(),
        kind: TargetKind::GlottalFlow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: u32 = 16000;

    #[test]
    fn triangle_values_around_regular_marks() {
        let gci = GciMarks::new(vec![0.100, 0.110, 0.120]).unwrap();
        let c = triangle_target(&gci, 3200, FS).unwrap();
        let at = |t: f64| c.values[(t * 16000.0_f64).round() as usize];
        assert_eq!(at(0.110), 1.0);
        assert_eq!(at(0.1075), 0.5);
        assert_eq!(at(0.105), 0.0);
        assert_eq!(at(0.090), 0.0);
        assert_eq!(at(0.095), 0.0);
        assert_eq!(at(0.0975), 0.5);
        assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn empty_marks_give_zero_curve() {
        let c = triangle_target(&GciMarks::empty(), 100, FS).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isolated_gci_uses_fallback_period() {
        let gci = GciMarks::new(vec![0.05, 0.2]).unwrap();
        let c = triangle_target(&gci, 4800, FS).unwrap();
        assert_eq!(c.values[800], 1.0);
        assert_eq!(c.values[800 - 80], 0.0);
        assert_eq!(c.values[800 + 40], 0.5);
    }

    #[test]
    fn marks_outside_buffer_rejected() {
        let gci = GciMarks::new(vec![0.5]).unwrap();
        assert!(triangle_target(&gci, 100, FS).is_err());
    }

    #[test]
    fn glottal_flow_normalizes_each_period() {
        let mut flow = vec![0.0; 40];
        for (i, v) in flow[0..20].iter_mut().enumerate() {
            *v = 0.02 * (std::f64::consts::PI * i as f64 / 19.0).sin().max(0.0);
        }
        for (i, v) in flow[20..40].iter_mut().enumerate() {
            *v = 0.5 * i as f64 / 19.0 * (1.0 - i as f64 / 19.0);
        }
        let buf = AudioBuffer::new(flow, FS).unwrap();
        let periods = [
            PeriodSpan { start: 0, len: 20, te_index: 15 },
            PeriodSpan { start: 20, len: 20, te_index: 15 },
        ];
        let t = glottal_flow_target(&buf, &periods).unwrap();
        let max1 = t.values[..20].iter().cloned().fold(0.0, f64::max);
        let max2 = t.values[20..].iter().cloned().fold(0.0, f64::max);
        assert_eq!(max1, 1.0);
        assert!((max2 - 1.0).abs() < 1e-12);
        assert!(glottal_flow_target(&AudioBuffer::zeros(40, FS), &periods)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
        let bad = [PeriodSpan { start: 30, len: 20, te_index: 5 }];
        assert!(glottal_flow_target(&buf, &bad).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("tri".parse::<TargetKind>().unwrap(), TargetKind::Triangle);
        assert_eq!("gf".parse::<TargetKind>().unwrap(), TargetKind::GlottalFlow);
        assert!("x".parse::<TargetKind>().is_err());
    }
}
