use gci_core::lf::{lf_pulse, rd_to_timing, sample_pulse, synth_source, LfPulseSpec, SourceContours};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: u32 = 16000;

fn random_spec(rng: &mut impl Rng) -> LfPulseSpec {
    LfPulseSpec::new(
        rng.random_range(0.0025..0.02),
        rng.random_range(0.3..=2.7),
        rng.random_range(0.01..2.0),
    )
    .unwrap()
}

fn constant_contours(f0: f64, rd: f64, frames: usize, voiced: bool) -> SourceContours {
    SourceContours {
        f0: vec![f0; frames],
        rd: vec![rd; frames],
        voiced: vec![voiced; frames],
        hop_s: SourceContours::DEFAULT_HOP_S,
    }
}

#[test]
fn solver_residuals_over_random_specs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let spec = random_spec(&mut rng);
        let tm = rd_to_timing(&spec).unwrap();
        assert!(tm.epsilon_residual() <= 1e-10, "{spec:?}");
        assert!(tm.net_flow().abs() <= 1e-8 * spec.ee * spec.t0, "{spec:?}: {}", tm.net_flow());
    }
}

#[test]
fn open_quotient_increases_with_rd() {
    let oq = |rd: f64| rd_to_timing(&LfPulseSpec::new(0.01, rd, 1.0).unwrap()).unwrap().open_quotient();
    assert!(oq(0.3) < oq(2.7));
    // The Rd regression flattens out and dips slightly above Rd ~ 2.45.
    let grid: Vec<f64> = (0..=42).map(|i| oq(0.3 + 0.05 * i as f64)).collect();
    for w in grid.windows(2) {
        assert!(w[1] > w[0]);
    }
}

#[test]
fn sampled_pulses_have_zero_net_flow_and_exact_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..300 {
        let spec = random_spec(&mut rng);
        let fs = 16000.0;
        let p = sample_pulse(&spec, fs).unwrap();
        assert_eq!(p.samples.len(), (spec.t0 * fs).round() as usize);
        assert_eq!(p.samples[0], 0.0);
        let net = p.samples.iter().sum::<f64>() / fs;
        assert!(net.abs() <= 1e-4 * spec.ee * spec.t0, "{spec:?}: {net}");
        let at_te = p.samples[p.te_index];
        assert!((at_te + spec.ee).abs() <= 0.02 * spec.ee);
        // Sampled instant is the nearest grid point to the continuous te.
        let cont = rd_to_timing(&spec).unwrap();
        assert!((p.timing.te - cont.te).abs() <= 0.5 / fs + 1e-12);
    }
}

#[test]
fn constant_100hz_source_gci_spacing() {
    let track = synth_source(&constant_contours(100.0, 1.0, 200, true), 0.3, FS).unwrap();
    let n = track.gci.len();
    assert!((99..=100).contains(&n), "{n} GCIs");
    for w in track.gci.times().windows(2) {
        assert!((w[1] - w[0] - 0.01).abs() <= 1.0 / 16000.0 + 1e-12);
    }
    assert!(track.period_at_gci.iter().all(|&p| (p - 0.01).abs() < 1e-12));
}

#[test]
fn unvoiced_source_is_silent() {
    let track = synth_source(&constant_contours(100.0, 1.0, 200, false), 0.3, FS).unwrap();
    assert!(track.gci.is_empty());
    assert!(track.flow.samples().iter().all(|&v| v == 0.0));
    assert!(track.flow_derivative.samples().iter().all(|&v| v == 0.0));
}

#[test]
fn constant_contours_repeat_identically() {
    let track = synth_source(&constant_contours(123.0, 1.4, 120, true), 0.3, FS).unwrap();
    let x = track.flow_derivative.samples();
    let first = track.periods[0];
    let reference = &x[first.start..first.end()];
    for p in &track.periods[1..] {
        // Best alignment by cross-correlation must be at the recorded period start.
        let best = (-2i64..=2)
            .map(|lag| {
                let s = (p.start as i64 + lag) as usize;
                let c: f64 = reference.iter().zip(&x[s..]).map(|(a, b)| a * b).sum();
                (lag, c)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(best.0, 0);
        assert_eq!(&x[p.start..p.end()], reference);
    }
}

#[test]
fn flow_properties_per_period() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frames = 300;
    let contours = SourceContours {
        f0: (0..frames).map(|i| 90.0 + 150.0 * (i as f64 / 40.0).sin().abs()).collect(),
        rd: (0..frames).map(|_| rng.random_range(0.3..2.7)).collect(),
        voiced: (0..frames).map(|i| (i / 50) % 3 != 2).collect(),
        hop_s: 0.005,
    };
    let track = synth_source(&contours, 0.3, FS).unwrap();
    assert!(!track.periods.is_empty());
    let flow = track.flow.samples();
    let deriv = track.flow_derivative.samples();
    assert!(flow.iter().all(|&v| v >= -1e-9));
    for (k, p) in track.periods.iter().enumerate() {
        let seg = &flow[p.start..p.end()];
        let max = seg.iter().cloned().fold(0.0, f64::max);
        assert!(seg[seg.len() - 1] < 1e-3 * max);
        let argmin = (p.start..p.end()).min_by(|&a, &b| deriv[a].total_cmp(&deriv[b])).unwrap();
        let gci_sample = (track.gci.times()[k] * 16000.0).round() as i64;
        assert!((argmin as i64 - gci_sample).abs() <= 1);
        // No GCI in an unvoiced frame.
        assert!(contours.voiced[p.gci_sample() / 80]);
    }
}

#[test]
fn doubling_ee_doubles_flow_derivative_exactly() {
    let c = constant_contours(160.0, 0.9, 100, true);
    let a = synth_source(&c, 0.3, FS).unwrap();
    let b = synth_source(&c, 0.6, FS).unwrap();
    for (x, y) in a.flow_derivative.samples().iter().zip(b.flow_derivative.samples()) {
        assert_eq!(2.0 * x, *y);
    }
    let spec = LfPulseSpec::new(0.007, 2.1, 0.25).unwrap();
    let spec2 = LfPulseSpec { ee: 0.5, ..spec };
    let p1 = lf_pulse(&spec, 16000.0).unwrap();
    let p2 = lf_pulse(&spec2, 16000.0).unwrap();
    assert!(p1.iter().zip(&p2).all(|(x, y)| 2.0 * x == *y));
}
