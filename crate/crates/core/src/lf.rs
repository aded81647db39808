//! Liljencrants-Fant glottal flow derivative pulses driven by the Rd shape
//! parameter, and pitch-synchronous pulse trains with exact GCI bookkeeping.
//!
//! One period of the flow derivative is
//!
//! ```text
//! U'(t) = E0 exp(alpha t) sin(pi t / tp)                                  0 <= t <= te
//! U'(t) = -(Ee / (epsilon ta)) (exp(-epsilon (t - te)) - exp(-epsilon (T0 - te)))   te < t < T0
//! ```
//!
//! with `epsilon` fixed by the return-phase continuity condition and `alpha`
//! by zero net flow over the period. The minimum `U'(te) = -Ee` is the GCI.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::signal::{AudioBuffer, GciMarks};

pub const RD_MIN: f64 = 0.3;
pub const RD_MAX: f64 = 2.7;
pub const T0_MIN: f64 = 0.002;
pub const T0_MAX: f64 = 0.020;
/// Default flow-derivative minimum magnitude per utterance.
pub const DEFAULT_EE: f64 = 0.3;

const MAX_ITERATIONS: usize = 100;
const ALPHA_BRACKET: f64 = 1e5;

/// Per-period source description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LfPulseSpec {
    pub t0: f64,
    pub rd: f64,
    pub ee: f64,
}

impl LfPulseSpec {
    pub fn new(t0: f64, rd: f64, ee: f64) -> Result<Self> {
        let spec = Self { t0, rd, ee };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(T0_MIN..=T0_MAX).contains(&self.t0) {
            return Err(Error::invalid(format!("T0 {} s outside [2 ms, 20 ms]", self.t0)));
        }
        if !(RD_MIN..=RD_MAX).contains(&self.rd) {
            return Err(Error::invalid(format!("Rd {} outside [{RD_MIN}, {RD_MAX}]", self.rd)));
        }
        if !(self.ee > 0.0 && self.ee.is_finite()) {
            return Err(Error::invalid(format!("Ee {} must be positive", self.ee)));
        }
        Ok(())
    }
}

/// Timing ratios predicted from Rd.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdRatios {
    pub ra: f64,
    pub rk: f64,
    pub rg: f64,
}

pub fn rd_ratios(rd: f64) -> RdRatios {
    let ra = (-1.0 + 4.8 * rd) / 100.0;
    let rk = (22.4 + 11.8 * rd) / 100.0;
    let rg = rk / (4.0 * (0.11 * rd / (0.5 + 1.2 * rk) - ra));
    RdRatios { ra, rk, rg }
}

/// Solved LF timing and shape constants for one period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LfTiming {
    pub t0: f64,
    pub tp: f64,
    pub te: f64,
    pub ta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub e0: f64,
    pub ee: f64,
}

impl LfTiming {
    /// Relative residual of `epsilon * ta = 1 - exp(-epsilon (T0 - te))`.
    pub fn epsilon_residual(&self) -> f64 {
        let lhs = self.epsilon * self.ta;
        (lhs - (1.0 - (-self.epsilon * (self.t0 - self.te)).exp())).abs() / lhs
    }

    /// Closed-form integral of `U'` over one period.
    pub fn net_flow(&self) -> f64 {
        self.ee * (opening_area(self.alpha, self.tp, self.te) + return_area(self.epsilon, self.ta, self.t0 - self.te))
    }

    pub fn open_quotient(&self) -> f64 {
        self.te / self.t0
    }

    pub fn flow_derivative(&self, t: f64) -> f64 {
        if t < 0.0 || t >= self.t0 {
            0.0
        } else if t <= self.te {
            self.e0 * (self.alpha * t).exp() * (PI * t / self.tp).sin()
        } else {
            return_branch(self.ee, self.epsilon, self.ta, t - self.te, self.t0 - self.te)
        }
    }
}

fn return_branch(ee: f64, epsilon: f64, ta: f64, dt: f64, tb: f64) -> f64 {
    -(ee / (epsilon * ta)) * ((-epsilon * dt).exp() - (-epsilon * tb).exp())
}

/// Integral of the opening branch for unit `Ee`, with `E0` eliminated through `U'(te) = -1`.
fn opening_area(alpha: f64, tp: f64, te: f64) -> f64 {
    let w = PI / tp;
    let s = (w * te).sin();
    let c = (w * te).cos();
    -(alpha * s - w * c + w * (-alpha * te).exp()) / (s * (alpha * alpha + w * w))
}

/// Integral of the return branch for unit `Ee`.
fn return_area(epsilon: f64, ta: f64, tb: f64) -> f64 {
    let decay = (-epsilon * tb).exp();
    -((1.0 - decay) / epsilon - tb * decay) / (epsilon * ta)
}

fn solve_epsilon(ta: f64, tb: f64) -> Result<f64> {
    let mut eps = 1.0 / ta;
    for _ in 0..MAX_ITERATIONS {
        let decay = (-eps * tb).exp();
        let g = eps * ta - 1.0 + decay;
        let dg = ta - tb * decay;
        let step = g / dg;
        eps -= step;
        if step.abs() <= 1e-15 * eps.abs() {
            let residual = (eps * ta - (1.0 - (-eps * tb).exp())).abs() / (eps * ta);
            if residual <= 1e-10 {
                return Ok(eps);
            }
        }
    }
    Err(Error::NoConvergence {
        what: "LF return-phase rate",
        iterations: MAX_ITERATIONS,
    })
}

/// Root of a decreasing function on `[lo, hi]`: bisection down to a 1e-3
/// bracket, then safeguarded Newton steps with a finite-difference slope.
fn solve_decreasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64, what: &'static str) -> Result<f64> {
    if !(f(lo) > 0.0 && f(hi) < 0.0) {
        return Err(Error::NoConvergence { what, iterations: 0 });
    }
    let mut iterations = 0;
    while hi - lo > 1e-3 {
        iterations += 1;
        if iterations > MAX_ITERATIONS {
            return Err(Error::NoConvergence { what, iterations });
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let fx = f(x);
        if fx.abs() <= tol {
            return Ok(x);
        }
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let h = 1e-6 * x.abs().max(1.0);
        let slope = (f(x + h) - f(x - h)) / (2.0 * h);
        let newton = x - fx / slope;
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::NoConvergence { what, iterations })
}

fn check_instants(t0: f64, tp: f64, te: f64, ta: f64) -> Result<()> {
    if !(0.0 < tp && tp < te && te < t0 && 0.0 < ta && ta < t0 - te) {
        return Err(Error::invalid(format!(
            "inconsistent LF instants: T0 {t0}, tp {tp}, te {te}, ta {ta}"
        )));
    }
    Ok(())
}

/// Rd regression to LF instants, then the implicit `epsilon` and `alpha` equations.
pub fn rd_to_timing(spec: &LfPulseSpec) -> Result<LfTiming> {
    spec.validate()?;
    let RdRatios { ra, rk, rg } = rd_ratios(spec.rd);
    let t0 = spec.t0;
    let tp = t0 / (2.0 * rg);
    let te = tp * (1.0 + rk);
    let ta = ra * t0;
    check_instants(t0, tp, te, ta)?;

    let epsilon = solve_epsilon(ta, t0 - te)?;
    let ret = return_area(epsilon, ta, t0 - te);
    let alpha = solve_decreasing(
        |a| opening_area(a, tp, te) + ret,
        -ALPHA_BRACKET,
        ALPHA_BRACKET,
        1e-12 * t0,
        "LF opening growth rate",
    )?;
    let e0 = -spec.ee / ((alpha * te).exp() * (PI * te / tp).sin());
    Ok(LfTiming {
        t0,
        tp,
        te,
        ta,
        alpha,
        epsilon,
        e0,
        ee: spec.ee,
    })
}

/// One sampled period plus the index of its GCI sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPulse {
    pub samples: Vec<f64>,
    pub te_index: usize,
    /// Timing actually used on the sample grid.
    pub timing: LfTiming,
}

/// Samples one period of `U'` at `t = n / fs`, `n < round(T0 fs)`.
///
/// `te` is moved to the nearest sample (with `tp` rescaled to keep `Rk`) so
/// the GCI sample carries exactly `-Ee`, and `alpha` is re-solved so that the
/// sampled period sums to zero flow.
pub fn sample_pulse(spec: &LfPulseSpec, fs: f64) -> Result<SampledPulse> {
    if fs < 8000.0 {
        return Err(Error::invalid(format!("sample rate {fs} Hz below 8 kHz")));
    }
    let cont = rd_to_timing(spec)?;
    let n = (cont.t0 * fs).round() as usize;
    let te_index = (cont.te * fs).round() as usize;
    let te = te_index as f64 / fs;
    let tp = cont.tp * te / cont.te;
    let (t0, ta) = (cont.t0, cont.ta);
    check_instants(t0, tp, te, ta)?;
    let tb = t0 - te;
    let epsilon = solve_epsilon(ta, tb)?;

    let w = PI / tp;
    let sin_te = (w * te).sin();
    let opening_t: Vec<f64> = (0..=te_index).map(|i| i as f64 / fs).collect();
    let ret: Vec<f64> = (te_index + 1..n)
        .map(|i| {
            let t = i as f64 / fs;
            if t < t0 {
                return_branch(1.0, epsilon, ta, t - te, tb)
            } else {
                0.0
            }
        })
        .collect();
    let ret_sum: f64 = ret.iter().sum();
    let opening = |alpha: f64| -> Vec<f64> {
        opening_t
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                if i == te_index {
                    -1.0
                } else {
                    -(w * t).sin() * (alpha * (t - te)).exp() / sin_te
                }
            })
            .collect()
    };
    let lo = (-ALPHA_BRACKET).max(-700.0 / te);
    let alpha = solve_decreasing(
        |a| opening(a).iter().sum::<f64>() + ret_sum,
        lo,
        ALPHA_BRACKET,
        1e-12 * n as f64,
        "sampled LF opening growth rate",
    )?;

    let ee = spec.ee;
    let samples: Vec<f64> = opening(alpha).into_iter().chain(ret).map(|v| v * ee).collect();
    let e0 = -ee / ((alpha * te).exp() * sin_te);
    Ok(SampledPulse {
        samples,
        te_index,
        timing: LfTiming {
            t0,
            tp,
            te,
            ta,
            alpha,
            epsilon,
            e0,
            ee,
        },
    })
}

/// One sampled period of the flow derivative.
pub fn lf_pulse(spec: &LfPulseSpec, fs: f64) -> Result<Vec<f64>> {
    Ok(sample_pulse(spec, fs)?.samples)
}

/// Sample span of one synthesized period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodSpan {
    pub start: usize,
    pub len: usize,
    pub te_index: usize,
}

impl PeriodSpan {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn gci_sample(&self) -> usize {
        self.start + self.te_index
    }
}

/// Synthesized voice source with its ground truth.
#[derive(Debug, Clone)]
pub struct SourceTrack {
    pub flow_derivative: AudioBuffer,
    /// Running integral of the flow derivative, restarted at every period start.
    pub flow: AudioBuffer,
    pub gci: GciMarks,
    pub period_at_gci: Vec<f64>,
    pub periods: Vec<PeriodSpan>,
}

/// Frame-sampled source control contours.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceContours {
    pub f0: Vec<f64>,
    pub rd: Vec<f64>,
    pub voiced: Vec<bool>,
    pub hop_s: f64,
}

impl SourceContours {
    pub const DEFAULT_HOP_S: f64 = 0.005;

    fn lerp(values: &[f64], pos: f64) -> f64 {
        let i = pos.floor() as usize;
        if i + 1 >= values.len() {
            return values[values.len() - 1];
        }
        let frac = pos - i as f64;
        values[i] + frac * (values[i + 1] - values[i])
    }
}

/// Pitch-synchronous LF pulse train.
///
/// A period starts at a sample inside a voiced frame and is emitted only if it
/// fits entirely inside voiced frames; its f0 and Rd are read (linearly
/// interpolated) at its start time.
pub fn synth_source(contours: &SourceContours, ee: f64, fs: u32) -> Result<SourceTrack> {
    let SourceContours { f0, rd, voiced, hop_s } = contours;
    if f0.len() != voiced.len() || rd.len() != voiced.len() {
        return Err(Error::invalid(format!(
            "contour lengths differ: f0 {}, rd {}, mask {}",
            f0.len(),
            rd.len(),
            voiced.len()
        )));
    }
    if !(ee > 0.0) {
        return Err(Error::invalid("Ee must be positive"));
    }
    for (i, (&v, &f)) in voiced.iter().zip(f0).enumerate() {
        if v && !(50.0..=500.0).contains(&f) {
            return Err(Error::invalid(format!("voiced frame {i} has f0 {f} Hz outside [50, 500]")));
        }
    }
    let fsf = f64::from(fs);
    let hop = (hop_s * fsf).round() as usize;
    if hop == 0 {
        return Err(Error::invalid("contour hop shorter than one sample"));
    }
    let total = voiced.len() * hop;
    let mut deriv = vec![0.0; total];
    let mut flow = vec![0.0; total];
    let mut gci = Vec::new();
    let mut period_at_gci = Vec::new();
    let mut periods = Vec::new();

    let next_voiced_start = |from_frame: usize| -> usize {
        (from_frame..voiced.len())
            .find(|&f| voiced[f])
            .map_or(total, |f| f * hop)
    };

    let mut s = next_voiced_start(0);
    while s < total {
        let pos = s as f64 / fsf / hop_s;
        let f0_here = SourceContours::lerp(f0, pos);
        let rd_here = SourceContours::lerp(rd, pos).clamp(RD_MIN, RD_MAX);
        let spec = LfPulseSpec::new(1.0 / f0_here, rd_here, ee)?;
        let pulse = sample_pulse(&spec, fsf)?;
        let len = pulse.samples.len();
        if s + len > total {
            break;
        }
        let first_frame = s / hop;
        let last_frame = (s + len - 1) / hop;
        if let Some(gap) = (first_frame..=last_frame).find(|&f| !voiced[f]) {
            s = next_voiced_start(gap);
            continue;
        }
        let mut acc = 0.0;
        for (k, &v) in pulse.samples.iter().enumerate() {
            deriv[s + k] = v;
            acc += v / fsf;
            flow[s + k] = acc;
        }
        let span = PeriodSpan {
            start: s,
            len,
            te_index: pulse.te_index,
        };
        gci.push(span.gci_sample() as f64 / fsf);
        period_at_gci.push(spec.t0);
        periods.push(span);
        s += len;
    }

    Ok(SourceTrack {
        flow_derivative: AudioBuffer::new(deriv, fs)?,
        flow: AudioBuffer::new(flow, fs)?,
        gci: GciMarks::new(gci)?,
        period_at_gci,
        periods,
    })
}
