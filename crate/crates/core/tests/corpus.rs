use gci_core::corpus::{
    build_corpus, gen_contours, synth_utterance, vocal_tract_filter, vocal_tract_sos, CorpusConfig, CorpusManifest,
    Formant, FrameClass, Split, UtteranceSpec, F0_MAX, F0_MIN,
};
use gci_core::lf::synth_source;
use gci_core::signal::{read_marks, read_wav, AudioBuffer};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

fn spec(seed: u64) -> UtteranceSpec {
    UtteranceSpec::random(&mut ChaCha8Rng::seed_from_u64(seed), (1.0, 3.0))
}

fn runs(classes: &[FrameClass]) -> Vec<(FrameClass, usize)> {
    let mut out: Vec<(FrameClass, usize)> = Vec::new();
    for &c in classes {
        match out.last_mut() {
            Some((k, n)) if *k == c => *n += 1,
            _ => out.push((c, 1)),
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contour_invariants(seed in any::<u64>(), dur in 1.0f64..10.0) {
        let mut s = spec(seed);
        s.duration_s = dur;
        let c = gen_contours(&s);
        let f0 = &c.source.f0;
        prop_assert!(f0.iter().all(|f| (F0_MIN..=F0_MAX).contains(f)));
        prop_assert!(c.source.rd.iter().all(|r| (0.3..=2.7).contains(r)));
        let voiced = c.classes.iter().filter(|&&k| k == FrameClass::Voiced).count();
        prop_assert!(voiced as f64 >= 0.6 * c.classes.len() as f64);
        let r = runs(&c.classes);
        for (k, n) in &r {
            let ms = *n as f64 * 5.0;
            prop_assert!((100.0..=800.0).contains(&ms), "{:?} segment of {} ms", k, ms);
        }
        for w in r.windows(2) {
            prop_assert!((w[0].0 == FrameClass::Voiced) != (w[1].0 == FrameClass::Voiced));
        }
    }
}

#[test]
fn contours_deterministic_and_shifted() {
    let s = spec(4);
    assert_eq!(gen_contours(&s), gen_contours(&s));
    let up = UtteranceSpec { rd_shift: 0.5, ..s.clone() };
    let (a, b) = (gen_contours(&s), gen_contours(&up));
    assert_eq!(a.classes, b.classes);
    assert_eq!(a.source.f0, b.source.f0);
    let mut unclamped = 0;
    for (x, y) in a.source.rd.iter().zip(&b.source.rd) {
        if *y < 2.7 {
            assert!((y - x - 0.5).abs() < 1e-12);
            unclamped += 1;
        }
    }
    assert!(unclamped > 0);
}

fn formants() -> Vec<Formant> {
    [(500.0, 80.0), (1500.0, 90.0), (2500.0, 120.0), (3500.0, 150.0)]
        .iter()
        .map(|&(center_hz, bandwidth_hz)| Formant { center_hz, bandwidth_hz })
        .collect()
}

#[test]
fn impulse_response_peaks_at_formants() {
    let n = 2048;
    let mut imp = vec![0.0; n];
    imp[0] = 1.0;
    let h = vocal_tract_filter(&AudioBuffer::new(imp, 16000).unwrap(), &formants()).unwrap();
    let mut buf: Vec<Complex<f64>> = h.samples().iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let bin_hz = 16000.0 / n as f64;
    for f in formants() {
        let lo = ((f.center_hz - 200.0) / bin_hz) as usize;
        let hi = ((f.center_hz + 200.0) / bin_hz) as usize;
        let peak = (lo..=hi).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
        let center_bin = f.center_hz / bin_hz;
        assert!((peak as f64 - center_bin).abs() <= 2.0, "{f:?}: peak bin {peak}, center {center_bin}");
        // Local maximum, not a band edge.
        assert!(peak > lo && peak < hi);
    }
}

#[test]
fn vocal_tract_filter_is_linear() {
    let a: Vec<f64> = (0..2000).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
    let b: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.37).sin()).collect();
    let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let f = |x: Vec<f64>| vocal_tract_filter(&AudioBuffer::new(x, 16000).unwrap(), &formants()).unwrap();
    let (ya, yb, ys) = (f(a), f(b), f(sum));
    for i in 0..2000 {
        assert!((ys.samples()[i] - ya.samples()[i] - yb.samples()[i]).abs() <= 1e-9);
    }
    assert!(f(vec![0.0; 100]).samples().iter().all(|&v| v == 0.0));
    assert!(vocal_tract_sos(&[Formant { center_hz: 8000.0, bandwidth_hz: 100.0 }], 16000.0).is_err());
}

#[test]
fn utterance_properties() {
    let s = spec(21);
    let (audio, truth) = synth_utterance(&s).unwrap();
    assert!((audio.peak() - 10f64.powf(-3.0 / 20.0)).abs() <= 1e-4);
    assert_eq!(truth.triangle.values.len(), audio.len());
    assert_eq!(truth.glottal_flow.values.len(), audio.len());
    let source = synth_source(&gen_contours(&s).source, 0.3, 16000).unwrap();
    assert_eq!(truth.gci, source.gci);

    // Every GCI in a voiced frame; gaps inside one voiced run within [2, 20] ms.
    let frame_of = |t: f64| (t * 16000.0).round() as usize / 80;
    for &t in truth.gci.times() {
        assert_eq!(truth.classes[frame_of(t)], FrameClass::Voiced);
    }
    for w in truth.gci.times().windows(2) {
        let (a, b) = (frame_of(w[0]), frame_of(w[1]));
        if truth.classes[a..=b].iter().all(|&c| c == FrameClass::Voiced) {
            let gap = w[1] - w[0];
            assert!((0.002..=0.020).contains(&gap), "gap {gap}");
        }
    }
}

#[test]
fn glottal_flow_target_derivative_minimum_at_gci() {
    let (_, truth) = synth_utterance(&spec(8)).unwrap();
    let v = &truth.glottal_flow.values;
    for (p, &t) in truth.source.periods.iter().zip(truth.gci.times()) {
        let seg = &v[p.start..p.end()];
        let max = seg.iter().cloned().fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        let argmin = (p.start..p.end() - 1).min_by(|&a, &b| (v[a + 1] - v[a]).total_cmp(&(v[b + 1] - v[b]))).unwrap();
        let gci = (t * 16000.0).round() as i64;
        assert!((argmin as i64 - gci).abs() <= 1, "argmin {argmin} gci {gci}");
    }
}

#[test]
fn different_seeds_give_distinct_audio() {
    let (a, _) = synth_utterance(&UtteranceSpec { duration_s: 1.5, ..spec(1) }).unwrap();
    let (b, _) = synth_utterance(&UtteranceSpec { duration_s: 1.5, ..spec(2) }).unwrap();
    let (x, y) = (a.samples(), b.samples());
    let n = x.len().min(y.len());
    let dot: f64 = (0..n).map(|i| x[i] * y[i]).sum();
    let nx: f64 = x[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny: f64 = y[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((dot / (nx * ny)).abs() < 0.9);
}

#[test]
fn small_corpus_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CorpusConfig {
        n_utterances: 10,
        master_seed: 99,
        duration_s: (1.0, 1.5),
        jobs: 2,
        ..Default::default()
    };
    let m = build_corpus(&cfg, dir.path()).unwrap();
    assert_eq!(m.entries.len(), 30);
    let count = |s| m.split(s).count();
    assert_eq!((count(Split::Train), count(Split::Validation), count(Split::Test)), (18, 6, 6));
    for chunk in m.entries.chunks(3) {
        assert!(chunk.iter().all(|e| e.split == chunk[0].split));
    }
    assert_eq!(CorpusManifest::load(&dir.path().join("manifest.json")).unwrap(), m);
    for e in &m.entries {
        let p = e.resolve(dir.path());
        let audio = read_wav(&p.audio).unwrap();
        let tri = read_wav(&p.target_tri).unwrap();
        assert_eq!(audio[0].len(), tri[0].len());
        assert!(read_wav(p.target_gf.as_ref().unwrap()).unwrap()[0].len() == audio[0].len());
        read_marks(&p.gci).unwrap();
    }

    assert!(build_corpus(&cfg, dir.path()).unwrap_err().is_validation());
    let again = tempfile::tempdir().unwrap();
    build_corpus(&CorpusConfig { jobs: 1, ..cfg.clone() }, again.path()).unwrap();
    for name in ["manifest.json", "utt_00003_m05.gci.txt", "utt_00007_p05.gci.txt"] {
        assert_eq!(
            std::fs::read(dir.path().join(name)).unwrap(),
            std::fs::read(again.path().join(name)).unwrap()
        );
    }
}
