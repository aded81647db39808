use std::f64::consts::PI;

use gci_core::signal::{
    butter_design, decimate, derivative, filtfilt, filtfilt_slice, find_peaks, normalize_peak, read_wav,
    spline_upsample, write_wav, AudioBuffer, FilterKind, PeakPickConfig, Polarity, WavEncoding,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

const FS: f64 = 16000.0;

fn sine(freq: f64, amp: f64, len: usize, fs: f64) -> Vec<f64> {
    (0..len).map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin()).collect()
}

/// Magnitude at `freq` from a direct DFT sum over a long impulse response.
fn impulse_response_gain(sections: &gci_core::signal::SosFilter, freq: f64, fs: f64) -> f64 {
    let mut imp = vec![0.0; 1 << 16];
    imp[0] = 1.0;
    let h = sections.apply(&imp);
    let (mut re, mut im) = (0.0, 0.0);
    for (n, v) in h.iter().enumerate() {
        let ph = -2.0 * PI * freq * n as f64 / fs;
        re += v * ph.cos();
        im += v * ph.sin();
    }
    (re * re + im * im).sqrt()
}

#[test]
fn fifth_order_lowpass_half_power_at_cutoff() {
    let lp = butter_design(5, 500.0, FilterKind::Lowpass, FS).unwrap();
    let g = impulse_response_gain(&lp, 500.0, FS);
    assert!((g - 0.7071).abs() < 1e-3, "gain {g}");
    let db = 20.0 * g.log10();
    assert!((db + 3.01).abs() < 0.1);
}

#[test]
fn filtfilt_has_zero_lag_on_50hz_sine() {
    let hp = butter_design(5, 30.0, FilterKind::Highpass, FS).unwrap();
    let lp = butter_design(5, 500.0, FilterKind::Lowpass, FS).unwrap();
    let x = sine(50.0, 0.5, 16000, FS);
    let y = filtfilt_slice(&lp, &filtfilt_slice(&hp, &x).unwrap()).unwrap();
    // Cross-correlation lag over the interior.
    let (lo, hi) = (2000, 14000);
    let best = (-40i64..=40)
        .map(|lag| {
            let c: f64 = (lo..hi).map(|i| x[i] * y[(i as i64 + lag) as usize]).sum();
            (lag, c)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert_eq!(best.0, 0);
}

fn band_energy(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    let n = buf.len();
    (0..n / 2)
        .filter(|&k| {
            let f = k as f64 * fs / n as f64;
            f >= lo && f < hi
        })
        .map(|k| buf[k].norm_sqr())
        .sum()
}

#[test]
fn filtfilt_lowpass_attenuates_white_noise_above_1khz() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f64> = (0..32768).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lp = butter_design(5, 500.0, FilterKind::Lowpass, FS).unwrap();
    let y = filtfilt_slice(&lp, &x).unwrap();
    let before = band_energy(&x, FS, 1000.0, FS / 2.0);
    let after = band_energy(&y, FS, 1000.0, FS / 2.0);
    let atten_db = 10.0 * (before / after).log10();
    assert!(atten_db >= 30.0, "attenuation {atten_db} dB");
}

#[test]
fn decimate_keeps_1khz_sinusoid_amplitude() {
    let x = AudioBuffer::new(sine(1000.0, 0.5, 48000, 48000.0), 48000).unwrap();
    let y = decimate(&x, 3).unwrap();
    assert_eq!(y.sample_rate(), 16000);
    assert_eq!(y.len(), 16000);
    // Least-squares fit of a*sin + b*cos at 1 kHz over the interior.
    let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 500..15500 {
        let ph = 2.0 * PI * 1000.0 * i as f64 / 16000.0;
        let (s, c, v) = (ph.sin(), ph.cos(), y.samples()[i]);
        ss += s * s;
        cc += c * c;
        sc += s * c;
        ys += v * s;
        yc += v * c;
    }
    let det = ss * cc - sc * sc;
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    let amp = (a * a + b * b).sqrt();
    assert!((amp - 0.5).abs() / 0.5 < 0.01, "amplitude {amp}");
}

#[test]
fn spline_upsampled_sine_matches_analytic() {
    let coarse = 2000.0;
    // 0.1 s so both ends sit on zero crossings, where the natural end condition is exact.
    let x = sine(50.0, 1.0, 201, coarse);
    let y = spline_upsample(&x, 8).unwrap();
    assert_eq!(y.len(), 1601);
    let max_err = y
        .iter()
        .enumerate()
        .map(|(j, v)| (v - (2.0 * PI * 50.0 * j as f64 / (coarse * 8.0)).sin()).abs())
        .fold(0.0, f64::max);
    assert!(max_err < 1e-4, "max error {max_err}");
}

#[test]
fn derivative_of_sine_peaks_at_two_pi_f() {
    let f = 100.0;
    let d = derivative(&sine(f, 1.0, 1600, FS), FS).unwrap();
    let max = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((max - 2.0 * PI * f).abs() / (2.0 * PI * f) < 0.01);
}

#[test]
fn stereo_speech_egg_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pair.wav");
    let speech = AudioBuffer::new(sine(220.0, 0.4, 4000, FS), 16000).unwrap();
    let egg = AudioBuffer::new(sine(110.0, 0.2, 4000, FS), 16000).unwrap();
    write_wav(&p, &[speech.clone(), egg.clone()], WavEncoding::Pcm16).unwrap();
    let ch = read_wav(&p).unwrap();
    assert_eq!(ch.len(), 2);
    assert_eq!(ch[0].len(), ch[1].len());
    assert_eq!(ch[0].sample_rate(), ch[1].sample_rate());
    for (orig, back) in [&speech, &egg].iter().zip(&ch) {
        for (a, b) in orig.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filtfilt_commutes_with_time_reversal(
        seed in any::<u64>(),
        len in 40usize..400,
        order in 1usize..9,
        cutoff in 50.0f64..7000.0,
        high in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kind = if high { FilterKind::Highpass } else { FilterKind::Lowpass };
        let f = butter_design(order, cutoff, kind, FS).unwrap();
        prop_assume!(len > f.pad_len());
        let buf = AudioBuffer::new(x.clone(), 16000).unwrap();
        let y = filtfilt(&f, &buf).unwrap();
        let mut xr = x;
        xr.reverse();
        let yr = filtfilt(&f, &AudioBuffer::new(xr, 16000).unwrap()).unwrap();
        let scale = y.peak().max(1e-300);
        for (a, b) in y.samples().iter().rev().zip(yr.samples()) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn spline_hits_every_knot(xs in prop::collection::vec(-10.0f64..10.0, 4..60), factor in 2usize..12) {
        let y = spline_upsample(&xs, factor).unwrap();
        prop_assert_eq!(y.len(), (xs.len() - 1) * factor + 1);
        for (i, v) in xs.iter().enumerate() {
            prop_assert_eq!(y[i * factor], *v);
        }
    }

    #[test]
    fn peaks_sorted_and_spaced(
        xs in prop::collection::vec(-1.0f64..1.0, 0..400),
        threshold in 0.0f64..0.9,
        min_ms in 0.1f64..5.0,
        negative in any::<bool>(),
    ) {
        let polarity = if negative { Polarity::Negative } else { Polarity::Positive };
        let cfg = PeakPickConfig::new(threshold, min_ms / 1000.0, polarity).unwrap();
        let m = find_peaks(&xs, FS, &cfg);
        for w in m.times().windows(2) {
            prop_assert!(w[1] > w[0]);
            prop_assert!(w[1] - w[0] >= cfg.min_distance_s - 1e-12);
        }
    }

    #[test]
    fn normalize_peak_idempotent(xs in prop::collection::vec(-2.0f64..2.0, 1..200), level in -20.0f64..0.0) {
        prop_assume!(xs.iter().any(|v| *v != 0.0));
        let a = AudioBuffer::new(xs, 16000).unwrap();
        let once = normalize_peak(&a, level).unwrap();
        let twice = normalize_peak(&once, level).unwrap();
        prop_assert!((once.peak() - 10f64.powf(level / 20.0)).abs() < 1e-12);
        for (x, y) in once.samples().iter().zip(twice.samples()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}
