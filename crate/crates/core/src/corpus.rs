//! Parametric multi-speaker synthetic corpus: random source contours, LF
//! pulse trains through formant resonators, band-limited unvoiced noise and
//! Rd-shift augmentation, written to disk with a JSON manifest.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lf::{synth_source, SourceContours, SourceTrack, DEFAULT_EE, RD_MAX, RD_MIN};
use crate::signal::{
    butter_design, normalize_peak, write_marks, write_wav, AudioBuffer, Biquad, FilterKind, GciMarks,
    SosFilter, WavEncoding, NORMALIZATION_DB, PIPELINE_RATE,
};
use crate::targets::{glottal_flow_target, triangle_target, TargetCurve};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RD_SHIFTS: [f64; 3] = [-0.5, 0.0, 0.5];
pub const F0_MIN: f64 = 70.0;
pub const F0_MAX: f64 = 400.0;

const HOP_S: f64 = SourceContours::DEFAULT_HOP_S;
const NOISE_BAND_HZ: (f64, f64) = (2000.0, 7000.0);
const NOISE_RAMP_S: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceSpec {
    pub seed: u64,
    pub duration_s: f64,
    pub f0_base: f64,
    pub formants: Vec<Formant>,
    pub rd_shift: f64,
    pub noise_gain: f64,
}

impl UtteranceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1.0..=10.0).contains(&self.duration_s) {
            return Err(Error::invalid(format!("duration {} s outside [1, 10]", self.duration_s)));
        }
        if !(F0_MIN..=F0_MAX).contains(&self.f0_base) {
            return Err(Error::invalid(format!("f0 base {} Hz outside [{F0_MIN}, {F0_MAX}]", self.f0_base)));
        }
        if !(3..=5).contains(&self.formants.len()) {
            return Err(Error::invalid(format!("{} formants, expected 3 to 5", self.formants.len())));
        }
        validate_formants(&self.formants, f64::from(PIPELINE_RATE))?;
        if self.formants.iter().any(|f| f.center_hz >= 7600.0) {
            return Err(Error::invalid("formant centers must stay below 7600 Hz"));
        }
        if !(self.noise_gain >= 0.0 && self.noise_gain.is_finite()) {
            return Err(Error::invalid("noise gain must be non-negative"));
        }
        if !self.rd_shift.is_finite() {
            return Err(Error::invalid("Rd shift must be finite"));
        }
        Ok(())
    }

    /// Random speaker proxy: log-uniform f0 base in [80, 300] Hz and a
    /// 3 to 5 formant set with increasing centers.
    pub fn random(rng: &mut impl Rng, duration_s: (f64, f64)) -> Self {
        const RANGES: [(f64, f64); 5] = [
            (300.0, 900.0),
            (900.0, 2400.0),
            (2000.0, 3400.0),
            (3000.0, 4500.0),
            (4000.0, 5500.0),
        ];
        let seed = rng.random();
        let duration_s = if duration_s.1 > duration_s.0 {
            rng.random_range(duration_s.0..=duration_s.1)
        } else {
            duration_s.0
        };
        let f0_base = (rng.random_range(80f64.ln()..=300f64.ln())).exp();
        let count = rng.random_range(3..=5);
        let mut formants: Vec<Formant> = Vec::with_capacity(count);
        for &(lo, hi) in &RANGES[..count] {
            let lo = formants.last().map_or(lo, |f| lo.max(f.center_hz + 150.0));
            let center_hz = rng.random_range(lo..hi.max(lo + 1.0));
            let bandwidth_hz = rng.random_range(50.0..=50.0 + center_hz * 0.05);
            formants.push(Formant { center_hz, bandwidth_hz });
        }
        let noise_gain = rng.random_range(0.01..=0.08);
        Self {
            seed,
            duration_s,
            f0_base,
            formants,
            rd_shift: 0.0,
            noise_gain,
        }
    }
}

fn validate_formants(formants: &[Formant], fs: f64) -> Result<()> {
    for (i, f) in formants.iter().enumerate() {
        if !(f.center_hz > 0.0 && f.center_hz < fs / 2.0) {
            return Err(Error::invalid(format!(
                "formant {i} center {} Hz not inside (0, {}) Hz",
                f.center_hz,
                fs / 2.0
            )));
        }
        if !(f.bandwidth_hz > 0.0 && f.bandwidth_hz.is_finite()) {
            return Err(Error::invalid(format!("formant {i} bandwidth must be positive")));
        }
        if i > 0 && f.center_hz <= formants[i - 1].center_hz {
            return Err(Error::invalid("formant centers must be strictly increasing"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameClass {
    Voiced,
    Unvoiced,
    Silence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contours {
    pub source: SourceContours,
    pub classes: Vec<FrameClass>,
}

/// Frame contours for one utterance, fully determined by `spec.seed`.
///
/// Segments alternate voiced / non-voiced, each 100 to 800 ms, with every
/// non-voiced segment at most two thirds of the preceding voiced one so that
/// at least 60% of the frames are voiced. The Rd shift is applied after the
/// random walk, so shifted variants share every other contour.
pub fn gen_contours(spec: &UtteranceSpec) -> Contours {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frames = (spec.duration_s / HOP_S).round() as usize;
    let classes = gen_classes(&mut rng, frames);

    let step = Normal::new(0.0, 1.0).expect("unit normal");
    let base = spec.f0_base.ln();
    let mut lf0 = base + 0.1 * step.sample(&mut rng);
    let mut f0 = Vec::with_capacity(frames);
    for _ in 0..frames {
        lf0 += 0.05 * (base - lf0) + 0.012 * step.sample(&mut rng);
        lf0 = lf0.clamp(F0_MIN.ln(), F0_MAX.ln());
        f0.push(lf0.exp().clamp(F0_MIN, F0_MAX));
    }

    let rd_mean: f64 = rng.random_range(0.6..=2.0);
    let mut r = rd_mean;
    let mut rd = Vec::with_capacity(frames);
    for _ in 0..frames {
        r += 0.03 * (rd_mean - r) + 0.04 * step.sample(&mut rng);
        r = r.clamp(RD_MIN, RD_MAX);
        rd.push((r + spec.rd_shift).clamp(RD_MIN, RD_MAX));
    }

    let voiced = classes.iter().map(|&c| c == FrameClass::Voiced).collect();
    Contours {
        source: SourceContours {
            f0,
            rd,
            voiced,
            hop_s: HOP_S,
        },
        classes,
    }
}

fn gen_classes(rng: &mut impl Rng, frames: usize) -> Vec<FrameClass> {
    const MIN: usize = 20;
    let mut out = Vec::with_capacity(frames);
    let mut left = frames;
    while left > 0 {
        let mut v = rng.random_range(40..=120).min(left);
        if left - v < MIN {
            v = left;
        }
        out.extend(std::iter::repeat_n(FrameClass::Voiced, v));
        left -= v;
        if left == 0 {
            break;
        }
        let cap = (2 * v / 3).min(60);
        let mut n = rng.random_range(MIN..=cap.max(MIN)).min(left);
        if left - n < MIN {
            if left <= cap {
                n = left;
            } else if left >= 2 * MIN {
                n = left - MIN;
            } else {
                out.extend(std::iter::repeat_n(FrameClass::Voiced, left));
                break;
            }
        }
        let class = if rng.random_bool(0.5) {
            FrameClass::Unvoiced
        } else {
            FrameClass::Silence
        };
        out.extend(std::iter::repeat_n(class, n));
        left -= n;
    }
    out
}

/// Cascade of two-pole resonators, one per formant, each with unit gain at
/// its center frequency.
pub fn vocal_tract_sos(formants: &[Formant], fs: f64) -> Result<SosFilter> {
    if formants.is_empty() {
        return Ok(SosFilter::identity());
    }
    validate_formants(formants, fs)?;
    let sections = formants
        .iter()
        .map(|f| {
            let r = (-PI * f.bandwidth_hz / fs).exp();
            let theta = 2.0 * PI * f.center_hz / fs;
            let mut s = Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: 0.0,
                a1: -2.0 * r * theta.cos(),
                a2: r * r,
            };
            s.b0 = 1.0 / s.response(theta).norm();
            s
        })
        .collect();
    SosFilter::new(sections)
}

pub fn vocal_tract_filter(source: &AudioBuffer, formants: &[Formant]) -> Result<AudioBuffer> {
    if source.sample_rate() != PIPELINE_RATE {
        return Err(Error::invalid(format!(
            "vocal tract filter expects {PIPELINE_RATE} Hz, got {}",
            source.sample_rate()
        )));
    }
    let sos = vocal_tract_sos(formants, source.fs())?;
    AudioBuffer::new(sos.apply(source.samples()), source.sample_rate())
}

/// Ground truth accompanying one synthesized utterance.
#[derive(Debug, Clone)]
pub struct UtteranceTruth {
    pub gci: GciMarks,
    pub triangle: TargetCurve,
    pub glottal_flow: TargetCurve,
    pub classes: Vec<FrameClass>,
    pub source: SourceTrack,
}

/// White noise band-limited to 2 to 7 kHz, present only in unvoiced frames
/// with short raised-cosine fades at segment edges.
fn unvoiced_noise(rng: &mut impl Rng, classes: &[FrameClass], hop: usize, fs: f64) -> Result<Vec<f64>> {
    let total = classes.len() * hop;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let white: Vec<f64> = (0..total).map(|_| normal.sample(rng)).collect();
    let band = butter_design(4, NOISE_BAND_HZ.0, FilterKind::Highpass, fs)?
        .then(&butter_design(4, NOISE_BAND_HZ.1, FilterKind::Lowpass, fs)?);
    let mut noise = band.apply(&white);

    let ramp = (NOISE_RAMP_S * fs).round() as usize;
    let mut gate = vec![0.0; total];
    let mut f = 0;
    while f < classes.len() {
        let start = f;
        while f < classes.len() && classes[f] == classes[start] {
            f += 1;
        }
        if classes[start] != FrameClass::Unvoiced {
            continue;
        }
        let (a, b) = (start * hop, f * hop);
        let len = b - a;
        let r = ramp.min(len / 2);
        for (k, g) in gate[a..b].iter_mut().enumerate() {
            let edge = k.min(len - 1 - k);
            *g = if edge >= r {
                1.0
            } else {
                0.5 - 0.5 * (PI * edge as f64 / r as f64).cos()
            };
        }
    }
    let energy: f64 = noise.iter().zip(&gate).map(|(n, g)| (n * g) * (n * g)).sum();
    let active: f64 = gate.iter().map(|g| g * g).sum();
    let rms = if active > 0.0 { (energy / active).sqrt() } else { 0.0 };
    for (n, g) in noise.iter_mut().zip(&gate) {
        *n = if rms > 0.0 { *n * g / rms } else { 0.0 };
    }
    Ok(noise)
}

/// One utterance at 16 kHz, peak-normalized to -3 dB.
///
/// The noise component has an RMS of `noise_gain` times the peak of the
/// filtered voiced part.
pub fn synth_utterance(spec: &UtteranceSpec) -> Result<(AudioBuffer, UtteranceTruth)> {
    spec.validate()?;
    let fs = PIPELINE_RATE;
    let contours = gen_contours(spec);
    let source = synth_source(&contours.source, DEFAULT_EE, fs)?;
    let voiced = vocal_tract_filter(&source.flow_derivative, &spec.formants)?;

    let hop = (HOP_S * f64::from(fs)).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let noise = unvoiced_noise(&mut rng, &contours.classes, hop, f64::from(fs))?;
    let reference = if voiced.peak() > 0.0 { voiced.peak() } else { 1.0 };
    let mixed: Vec<f64> = voiced
        .samples()
        .iter()
        .zip(&noise)
        .map(|(v, n)| v + spec.noise_gain * reference * n)
        .collect();
    let mixed = AudioBuffer::new(mixed, fs)?;
    let audio = if mixed.peak() > 0.0 {
        normalize_peak(&mixed, NORMALIZATION_DB)?
    } else {
        mixed
    };

    let triangle = triangle_target(&source.gci, audio.len(), fs)?;
    let glottal_flow = glottal_flow_target(&source.flow, &source.periods)?;
    let truth = UtteranceTruth {
        gci: source.gci.clone(),
        triangle,
        glottal_flow,
        classes: contours.classes,
        source,
    };
    Ok((audio, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub audio: String,
    pub gci: String,
    pub target_tri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_gf: Option<String>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<UtteranceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub sample_rate: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: CorpusManifest =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::malformed(path, format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        crate::fsutil::atomic_write_bytes(path, text.as_bytes())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Paths of an entry resolved against the manifest's directory.
#[derive(Debug, Clone)]
pub struct EntryPaths {
    pub audio: PathBuf,
    pub gci: PathBuf,
    pub target_tri: PathBuf,
    pub target_gf: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn resolve(&self, base: &Path) -> EntryPaths {
        EntryPaths {
            audio: base.join(&self.audio),
            gci: base.join(&self.gci),
            target_tri: base.join(&self.target_tri),
            target_gf: self.target_gf.as_ref().map(|p| base.join(p)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub n_utterances: usize,
    pub ratios: [f64; 3],
    pub master_seed: u64,
    pub duration_s: (f64, f64),
    pub force: bool,
    pub jobs: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_utterances: 100,
            ratios: [0.6, 0.2, 0.2],
            master_seed: 0,
            duration_s: (1.0, 3.0),
            force: false,
            jobs: 1,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_utterances < 10 {
            return Err(Error::invalid(format!("need at least 10 utterances, got {}", self.n_utterances)));
        }
        if self.ratios.iter().any(|r| !(*r >= 0.0)) || (self.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("split ratios {:?} must be non-negative and sum to 1", self.ratios)));
        }
        let (lo, hi) = self.duration_s;
        if !(1.0 <= lo && lo <= hi && hi <= 10.0) {
            return Err(Error::invalid(format!("duration range [{lo}, {hi}] s must lie in [1, 10]")));
        }
        Ok(())
    }
}

/// Per-split counts: train and validation rounded, test takes the rest.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let val = ((n as f64 * ratios[1]).round() as usize).min(n - train);
    [train, val, n - train - val]
}

/// Split of every base spec index, from a seeded permutation.
pub fn assign_splits(n: usize, ratios: [f64; 3], master_seed: u64) -> Vec<Split> {
    let [train, val, _] = split_counts(n, ratios);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(2);
    order.shuffle(&mut rng);
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    out
}

/// The base (unshifted) specs of a corpus.
pub fn base_specs(cfg: &CorpusConfig) -> Vec<UtteranceSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    (0..cfg.n_utterances)
        .map(|_| UtteranceSpec::random(&mut rng, cfg.duration_s))
        .collect()
}

fn shift_tag(shift: f64) -> String {
    let sign = if shift < 0.0 { 'm' } else { 'p' };
    format!("{sign}{:02}", (shift.abs() * 10.0).round() as u32)
}

fn write_entry(out_dir: &Path, id: &str, spec: &UtteranceSpec, split: Split) -> Result<ManifestEntry> {
    let (audio, truth) = synth_utterance(spec)?;
    let entry = ManifestEntry {
        id: id.to_string(),
        audio: format!("{id}.wav"),
        gci: format!("{id}.gci.txt"),
        target_tri: format!("{id}.tri.wav"),
        target_gf: Some(format!("{id}.gf.wav")),
        split,
        spec: Some(spec.clone()),
    };
    let p = entry.resolve(out_dir);
    write_wav(&p.audio, &[audio], WavEncoding::Pcm16)?;
    write_marks(&p.gci, &truth.gci)?;
    write_wav(&p.target_tri, &[truth.triangle.to_audio()], WavEncoding::Float32)?;
    if let Some(gf) = &p.target_gf {
        write_wav(gf, &[truth.glottal_flow.to_audio()], WavEncoding::Float32)?;
    }
    Ok(entry)
}

/// Synthesizes every base spec under the three Rd shifts and writes audio,
/// markers, targets and `manifest.json` into `out_dir`.
pub fn build_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<CorpusManifest> {
    cfg.validate()?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !cfg.force {
        return Err(Error::invalid(format!(
            "{} already exists (pass force to overwrite)",
            manifest_path.display()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let bases = base_specs(cfg);
    let splits = assign_splits(cfg.n_utterances, cfg.ratios, cfg.master_seed);
    let jobs: Vec<(String, UtteranceSpec, Split)> = bases
        .iter()
        .enumerate()
        .flat_map(|(i, base)| {
            let split = splits[i];
            RD_SHIFTS.iter().map(move |&shift| {
                let spec = UtteranceSpec {
                    rd_shift: shift,
                    ..base.clone()
                };
                (format!("utt_{i:05}_{}", shift_tag(shift)), spec, split)
            })
        })
        .collect();

    let entries = crate::par::par_map(&jobs, cfg.jobs, |(id, spec, split)| {
        write_entry(out_dir, id, spec, *split)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        sample_rate: PIPELINE_RATE,
        master_seed: Some(cfg.master_seed),
        entries,
    };
    manifest.save(&manifest_path)?;
    log::info!("wrote {} entries to {}", manifest.entries.len(), out_dir.display());
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> UtteranceSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        UtteranceSpec::random(&mut rng, (1.0, 2.0))
    }

    #[test]
    fn random_specs_are_valid() {
        for s in 0..200 {
            spec(s).validate().unwrap();
        }
    }

    #[test]
    fn split_counts_for_ten() {
        assert_eq!(split_counts(10, [0.6, 0.2, 0.2]), [6, 2, 2]);
        assert_eq!(split_counts(300, [0.6, 0.2, 0.2]), [180, 60, 60]);
        let s = assign_splits(10, [0.6, 0.2, 0.2], 3);
        assert_eq!(s.iter().filter(|&&x| x == Split::Train).count(), 6);
        assert_eq!(s, assign_splits(10, [0.6, 0.2, 0.2], 3));
    }

    #[test]
    fn shift_tags() {
        assert_eq!(shift_tag(-0.5), "m05");
        assert_eq!(shift_tag(0.0), "p00");
        assert_eq!(shift_tag(0.5), "p05");
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = CorpusConfig {
            n_utterances: 9,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.n_utterances = 10;
        c.ratios = [0.5, 0.2, 0.2];
        assert!(c.validate().is_err());
        c.ratios = [0.6, 0.2, 0.2];
        c.validate().unwrap();
    }
}
