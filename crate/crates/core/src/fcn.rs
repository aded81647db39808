//! The fully-convolutional GCI regressor: architecture, weight files,
//! full-signal inference, peak-picking detection and training.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, Split};
use crate::error::{Error, Result};
use crate::nn::{mse_loss, Activation, AdamState, Layer, Network, Tensor3};
use crate::signal::{
    decimate, derivative, find_peak_indices, normalize_peak, read_wav, spline_upsample, AudioBuffer, GciMarks,
    PeakPickConfig, Polarity, NORMALIZATION_DB, PIPELINE_RATE,
};
use crate::targets::TargetKind;

/// Input samples seen by one output value.
pub const RECEPTIVE_FIELD: usize = 993;
/// Input samples per output sample.
pub const DECIMATION: usize = 8;
/// Samples on each side of the window center.
pub const HALF_WINDOW: usize = RECEPTIVE_FIELD / 2;

const WEIGHT_MAGIC: &[u8; 4] = b"FCNG";
const WEIGHT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub filters: usize,
    pub kernel: usize,
    pub pooled: bool,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub layers: Vec<LayerSpec>,
}

impl ArchConfig {
    pub const FULL_FILTERS: [usize; 7] = [512, 64, 64, 256, 512, 1024, 1];
    pub const SMALL_FILTERS: [usize; 7] = [128, 16, 16, 64, 128, 256, 1];
    pub const KERNELS: [usize; 7] = [32, 32, 32, 32, 32, 32, 4];

    /// Seven layers with the default kernels; pooling after the first three,
    /// sigmoid on the last.
    pub fn with_filters(filters: [usize; 7]) -> Self {
        Self::with_layout(filters, Self::KERNELS)
    }

    pub fn with_layout(filters: [usize; 7], kernels: [usize; 7]) -> Self {
        let layers = (0..7)
            .map(|i| LayerSpec {
                filters: filters[i],
                kernel: kernels[i],
                pooled: i < 3,
                activation: if i == 6 { Activation::Sigmoid } else { Activation::Relu },
            })
            .collect();
        Self { layers }
    }

    pub fn full() -> Self {
        Self::with_filters(Self::FULL_FILTERS)
    }

    pub fn small() -> Self {
        Self::with_filters(Self::SMALL_FILTERS)
    }

    /// Input span of one output, from the valid-conv / pool arithmetic.
    pub fn receptive_field(&self) -> usize {
        self.layers.iter().rev().fold(1, |n, l| {
            let n = if l.pooled { 2 * n } else { n };
            n + l.kernel - 1
        })
    }

    pub fn decimation(&self) -> usize {
        1 << self.layers.iter().filter(|l| l.pooled).count()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("architecture: {m}")));
        if self.layers.len() != 7 {
            return bad(format!("expected 7 layers, got {}", self.layers.len()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.filters == 0 || l.kernel == 0 {
                return bad(format!("layer {} has zero filters or kernel", i + 1));
            }
            if l.pooled != (i < 3) {
                return bad("pooling must follow exactly layers 1 to 3".into());
            }
            let want = if i == 6 { Activation::Sigmoid } else { Activation::Relu };
            if l.activation != want {
                return bad(format!("layer {} must use {want:?}", i + 1));
            }
        }
        if self.layers[6].filters != 1 {
            return bad("last layer must have a single filter".into());
        }
        let rf = self.receptive_field();
        if rf != RECEPTIVE_FIELD || self.decimation() != DECIMATION {
            return bad(format!(
                "receptive field {rf} and decimation {} (need {RECEPTIVE_FIELD} and {DECIMATION})",
                self.decimation()
            ));
        }
        Ok(())
    }
}

/// A built network with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub net: Network<f32>,
}

impl Model {
    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            layers: self
                .net
                .layers
                .iter()
                .map(|l| LayerSpec {
                    filters: l.out_ch,
                    kernel: l.kernel,
                    pooled: l.pooled,
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

/// He-initialized model; fails unless the layout maps 993 samples to 1.
pub fn build_model(arch: &ArchConfig, seed: u64) -> Result<Model> {
    arch.validate()?;
    let mut cin = 1;
    let layers = arch
        .layers
        .iter()
        .map(|s| {
            let l = Layer::new(cin, s.filters, s.kernel, s.pooled, s.activation);
            cin = s.filters;
            l
        })
        .collect();
    let mut net = Network::new(layers)?;
    if net.output_len(RECEPTIVE_FIELD) != Some(1) {
        return Err(Error::invalid("architecture does not map 993 samples to one output"));
    }
    net.init_he(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Model { net })
}

pub fn encode_weights(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.net.layers.len() as u32).to_le_bytes());
    for l in &model.net.layers {
        for v in [l.in_ch, l.out_ch, l.kernel] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(u8::from(l.pooled));
        out.push(match l.activation {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
        });
        for arr in [&l.weight, &l.bias, &l.gamma, &l.beta, &l.running_mean, &l.running_var] {
            for v in arr.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&l.bn_eps.to_le_bytes());
    }
    out
}

pub fn save_weights(model: &Model, path: &Path) -> Result<()> {
    crate::fsutil::atomic_write_bytes(path, &encode_weights(model))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| {
            Error::malformed(self.path, format!("truncated weight file at byte {}", self.pos))
        })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::malformed(self.path, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn decode_weights(data: &[u8], path: &Path) -> Result<Model> {
    let mut c = Cursor { data, pos: 0, path };
    let magic = c.take(4)?;
    if magic != WEIGHT_MAGIC {
        return Err(Error::malformed(
            path,
            format!("bad magic {magic:?}, expected \"FCNG\""),
        ));
    }
    let version = c.u32()?;
    if version != WEIGHT_VERSION {
        return Err(Error::malformed(path, format!("unsupported weight version {version}, expected {WEIGHT_VERSION}")));
    }
    let count = c.u32()? as usize;
    if count == 0 || count > 64 {
        return Err(Error::malformed(path, format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let (in_ch, out_ch, kernel) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
        let pooled = match c.u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::malformed(path, format!("layer {i}: bad pooled flag {v}"))),
        };
        let activation = match c.u8()? {
            0 => Activation::Relu,
            1 => Activation::Sigmoid,
            v => return Err(Error::malformed(path, format!("layer {i}: bad activation code {v}"))),
        };
        let mut l = Layer::new(in_ch, out_ch, kernel, pooled, activation);
        l.weight = c.f32s(out_ch * in_ch * kernel)?;
        l.bias = c.f32s(out_ch)?;
        l.gamma = c.f32s(out_ch)?;
        l.beta = c.f32s(out_ch)?;
        l.running_mean = c.f32s(out_ch)?;
        l.running_var = c.f32s(out_ch)?;
        l.bn_eps = c.f32s(1)?[0];
        layers.push(l);
    }
    if c.pos != data.len() {
        return Err(Error::malformed(path, format!("{} trailing bytes", data.len() - c.pos)));
    }
    let net = Network::new(layers).map_err(|e| Error::malformed(path, e.to_string()))?;
    if net.in_channels() != 1 {
        return Err(Error::malformed(path, "first layer must take one channel"));
    }
    let model = Model { net };
    model.arch().validate().map_err(|e| Error::malformed(path, e.to_string()))?;
    Ok(model)
}

pub fn load_weights(path: &Path) -> Result<Model> {
    let mut data = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|e| Error::io(path, e))?;
    decode_weights(&data, path)
}

/// Network output sampled at 2 kHz: value `i` belongs to input sample `8 i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub values: Vec<f64>,
    /// Length of the audio the curve was computed from.
    pub source_len: usize,
}

impl Curve {
    pub fn rate(&self) -> f64 {
        f64::from(PIPELINE_RATE) / DECIMATION as f64
    }

    /// Curve read off a 16 kHz target at every eighth sample.
    pub fn from_target(target: &[f64]) -> Self {
        Self {
            values: target.iter().step_by(DECIMATION).copied().collect(),
            source_len: target.len(),
        }
    }

    /// Spline upsampling by the decimation factor, back to one value per
    /// input sample. The spline ends on the last curve point; the few input
    /// samples after it hold that value.
    pub fn upsampled(&self) -> Result<Vec<f64>> {
        let mut up = upsample(&self.values, DECIMATION)?;
        let last = up.last().copied().unwrap_or(0.0);
        up.resize(self.source_len, last);
        Ok(up)
    }

    /// Writes the upsampled 16 kHz curve as `time_s,value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let up = self.upsampled()?;
        let fs = f64::from(PIPELINE_RATE);
        crate::fsutil::atomic_write(path, |w| {
            writeln!(w, "time_s,value")?;
            for (i, v) in up.iter().enumerate() {
                writeln!(w, "{:.6},{:.6}", i as f64 / fs, v)?;
            }
            Ok(())
        })
    }
}

/// Outputs computed per inference chunk; bounds the im2col buffers.
const CHUNK_OUTPUTS: usize = 256;

/// Full-signal inference.
///
/// The audio is padded with 496 zeros on both sides, so output `i` is the
/// network applied to the window centered on input sample `8 i`. For `n`
/// input samples the padded length is `n + 992` and the curve has
/// `(n - 1) / 8 + 1` values (integer division), i.e. `ceil(n / 8)`.
pub fn predict_curve(model: &Model, audio: &AudioBuffer) -> Result<Curve> {
    if audio.sample_rate() != PIPELINE_RATE {
        return Err(Error::invalid(format!(
            "inference needs {PIPELINE_RATE} Hz audio, got {} Hz",
            audio.sample_rate()
        )));
    }
    if audio.is_empty() {
        return Err(Error::invalid("cannot run inference on empty audio"));
    }
    let n = audio.len();
    let n_out = (n - 1) / DECIMATION + 1;
    let mut padded = vec![0.0f32; n + 2 * HALF_WINDOW];
    for (p, &x) in padded[HALF_WINDOW..].iter_mut().zip(audio.samples()) {
        *p = x as f32;
    }
    let mut values = Vec::with_capacity(n_out);
    let mut first = 0;
    while first < n_out {
        let count = CHUNK_OUTPUTS.min(n_out - first);
        let start = first * DECIMATION;
        let len = RECEPTIVE_FIELD + DECIMATION * (count - 1);
        let x = Tensor3::from_channel_major(1, 1, len, padded[start..start + len].to_vec())?;
        let y = model.net.forward(&x)?;
        debug_assert_eq!(y.time(), count);
        values.extend(y.data().iter().map(|&v| f64::from(v)));
        first += count;
    }
    Ok(Curve { values, source_len: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub target_kind: TargetKind,
    pub tri_threshold: f64,
    pub gf_rel_threshold: f64,
    pub min_distance_s: f64,
    pub upsample_factor: usize,
}

impl DetectConfig {
    pub fn new(target_kind: TargetKind) -> Self {
        Self {
            target_kind,
            tri_threshold: 0.5,
            gf_rel_threshold: 0.2,
            min_distance_s: PeakPickConfig::DEFAULT_MIN_DISTANCE_S,
            upsample_factor: DECIMATION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tri_threshold > 0.0 && self.tri_threshold < 1.0) {
            return Err(Error::invalid("triangle threshold must be in (0, 1)"));
        }
        if !(self.gf_rel_threshold > 0.0 && self.gf_rel_threshold < 1.0) {
            return Err(Error::invalid("glottal-flow relative threshold must be in (0, 1)"));
        }
        if self.upsample_factor != DECIMATION {
            return Err(Error::invalid(format!("upsample factor must equal the decimation {DECIMATION}")));
        }
        if !(self.min_distance_s > 0.0) {
            return Err(Error::invalid("minimum GCI distance must be positive"));
        }
        Ok(())
    }
}

fn upsample(values: &[f64], factor: usize) -> Result<Vec<f64>> {
    match values.len() {
        0 => Ok(Vec::new()),
        1 => Ok(vec![values[0]]),
        2 | 3 => {
            let mut out = Vec::with_capacity((values.len() - 1) * factor + 1);
            for w in values.windows(2) {
                for j in 0..factor {
                    out.push(w[0] + (w[1] - w[0]) * j as f64 / factor as f64);
                }
            }
            out.push(values[values.len() - 1]);
            Ok(out)
        }
        _ => spline_upsample(values, factor),
    }
}

/// GCIs from a 2 kHz curve: spline upsampling to 16 kHz, then peaks of the
/// curve (triangle target) or negative peaks of its derivative (glottal flow).
pub fn detect_from_curve(curve: &Curve, cfg: &DetectConfig) -> Result<GciMarks> {
    cfg.validate()?;
    let fs = f64::from(PIPELINE_RATE);
    let up = curve.upsampled()?;
    let duration = curve.source_len as f64 / fs;
    let (indices, offset) = match cfg.target_kind {
        TargetKind::Triangle => {
            let pick = PeakPickConfig::new(cfg.tri_threshold, cfg.min_distance_s, Polarity::Positive)?;
            (find_peak_indices(&up, fs, &pick), 0.0)
        }
        TargetKind::GlottalFlow => {
            if up.len() < 2 {
                return Ok(GciMarks::empty());
            }
            let d = derivative(&up, fs)?;
            let strongest = d.iter().fold(0.0f64, |m, &v| m.max(-v));
            if strongest <= 1e-9 {
                return Ok(GciMarks::empty());
            }
            let pick = PeakPickConfig::new(cfg.gf_rel_threshold * strongest, cfg.min_distance_s, Polarity::Negative)?;
            (find_peak_indices(&d, fs, &pick), 0.5)
        }
    };
    let times = indices
        .into_iter()
        .map(|i| (i as f64 + offset) / fs)
        .filter(|&t| t >= 0.0 && t < duration)
        .collect();
    GciMarks::new(times)
}

pub fn detect(model: &Model, audio: &AudioBuffer, cfg: &DetectConfig) -> Result<GciMarks> {
    detect_from_curve(&predict_curve(model, audio)?, cfg)
}

/// Converts audio to the pipeline format: 16 kHz (by integer decimation)
/// and peak level -3 dB. Silent audio is returned unscaled.
pub fn prepare_input(audio: &AudioBuffer) -> Result<AudioBuffer> {
    let rate = audio.sample_rate();
    let at_rate = if rate == PIPELINE_RATE {
        audio.clone()
    } else if rate > PIPELINE_RATE && rate % PIPELINE_RATE == 0 {
        decimate(audio, (rate / PIPELINE_RATE) as usize)?
    } else {
        return Err(Error::invalid(format!(
            "sample rate {rate} Hz is not an integer multiple of {PIPELINE_RATE} Hz"
        )));
    };
    if at_rate.peak() > 0.0 {
        normalize_peak(&at_rate, NORMALIZATION_DB)
    } else {
        Ok(at_rate)
    }
}

/// Audio and target of one file, in memory.
#[derive(Debug, Clone)]
pub struct TrainingFile {
    pub audio: Vec<f32>,
    pub target: Vec<f32>,
}

/// Files of one split with a sampler over valid window positions.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    files: Vec<TrainingFile>,
}

impl TrainingSet {
    pub fn new(files: Vec<TrainingFile>) -> Result<Self> {
        for (i, f) in files.iter().enumerate() {
            if f.audio.len() != f.target.len() {
                return Err(Error::invalid(format!(
                    "file {i}: audio has {} samples, target {}",
                    f.audio.len(),
                    f.target.len()
                )));
            }
        }
        Ok(Self { files })
    }

    /// Loads one split of a manifest with the chosen target.
    pub fn from_manifest(manifest: &CorpusManifest, base: &Path, split: Split, kind: TargetKind) -> Result<Self> {
        let mut files = Vec::new();
        for e in manifest.split(split) {
            let p = e.resolve(base);
            let target_path = match kind {
                TargetKind::Triangle => p.target_tri.clone(),
                TargetKind::GlottalFlow => p.target_gf.clone().ok_or_else(|| {
                    Error::invalid(format!("manifest entry {} has no glottal-flow target", e.id))
                })?,
            };
            let audio = first_channel(&p.audio)?;
            let target = first_channel(&target_path)?;
            if audio.sample_rate() != PIPELINE_RATE || target.sample_rate() != PIPELINE_RATE {
                return Err(Error::invalid(format!("entry {} is not at {PIPELINE_RATE} Hz", e.id)));
            }
            files.push(TrainingFile {
                audio: audio.samples().iter().map(|&v| v as f32).collect(),
                target: target.samples().iter().map(|&v| v as f32).collect(),
            });
        }
        Self::new(files)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Cumulative counts of valid first-center positions per file.
    fn position_table(&self, outputs: usize) -> Result<Vec<usize>> {
        let span = RECEPTIVE_FIELD + DECIMATION * (outputs - 1);
        let mut acc = 0;
        let mut table = Vec::with_capacity(self.files.len());
        let mut short = 0;
        for f in &self.files {
            if f.audio.len() >= span {
                acc += f.audio.len() - span + 1;
            } else {
                short += 1;
            }
            table.push(acc);
        }
        if short > 0 {
            log::warn!("{short} files shorter than the {span}-sample training window were skipped");
        }
        if acc == 0 {
            return Err(Error::invalid(format!("no file is at least {span} samples long")));
        }
        Ok(table)
    }

    /// Random windows, uniform over all valid positions of all files.
    ///
    /// Each input holds `993 + 8 (outputs - 1)` samples; for a window
    /// starting at `s` the targets are the target curve at the centers
    /// `s + 496 + 8 j`.
    pub fn sample_batch(&self, rng: &mut impl Rng, batch: usize, outputs: usize) -> Result<(Tensor3<f32>, Tensor3<f32>)> {
        let table = self.position_table(outputs)?;
        self.sample_with_table(&table, rng, batch, outputs)
    }

    fn sample_with_table(
        &self,
        table: &[usize],
        rng: &mut impl Rng,
        batch: usize,
        outputs: usize,
    ) -> Result<(Tensor3<f32>, Tensor3<f32>)> {
        let span = RECEPTIVE_FIELD + DECIMATION * (outputs - 1);
        let total = *table.last().expect("non-empty table");
        let mut inputs = Vec::with_capacity(batch * span);
        let mut targets = Vec::with_capacity(batch * outputs);
        for _ in 0..batch {
            let r = rng.random_range(0..total);
            let fi = table.partition_point(|&c| c <= r);
            let before = if fi == 0 { 0 } else { table[fi - 1] };
            let start = r - before;
            let f = &self.files[fi];
            inputs.extend_from_slice(&f.audio[start..start + span]);
            targets.extend((0..outputs).map(|j| f.target[start + HALF_WINDOW + DECIMATION * j]));
        }
        Ok((
            Tensor3::from_channel_major(batch, 1, span, inputs)?,
            Tensor3::from_channel_major(batch, 1, outputs, targets)?,
        ))
    }
}

fn first_channel(path: &Path) -> Result<AudioBuffer> {
    Ok(read_wav(path)?.swap_remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub lr_min: f64,
    pub epoch_batches: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub segment_len: usize,
    /// Output values per training window; 1 reproduces single-center windows.
    pub outputs_per_segment: usize,
    pub val_windows: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr_init: 2e-4,
            lr_factor: 0.75,
            lr_patience: 10,
            lr_min: 2.5e-6,
            epoch_batches: 500,
            early_stop_patience: 64,
            max_epochs: 10_000,
            segment_len: RECEPTIVE_FIELD,
            outputs_per_segment: 1,
            val_windows: 8192,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("lr_patience", self.lr_patience),
            ("epoch_batches", self.epoch_batches),
            ("early_stop_patience", self.early_stop_patience),
            ("max_epochs", self.max_epochs),
            ("outputs_per_segment", self.outputs_per_segment),
            ("val_windows", self.val_windows),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if !(self.lr_init > 0.0 && self.lr_min > 0.0 && self.lr_min < self.lr_init) {
            return Err(Error::invalid("need 0 < lr_min < lr_init"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::invalid("lr_factor must be in (0, 1)"));
        }
        if self.segment_len != RECEPTIVE_FIELD {
            return Err(Error::invalid(format!("segment length must be {RECEPTIVE_FIELD}")));
        }
        if self.batch_size * self.outputs_per_segment < 2 {
            return Err(Error::invalid("batch normalization needs at least two outputs per batch"));
        }
        Ok(())
    }

    /// Input samples per training window.
    pub fn window_len(&self) -> usize {
        self.segment_len + DECIMATION * (self.outputs_per_segment - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub best: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss.
    pub model: Model,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Fixed validation windows, drawn once from their own seed.
pub struct ValidationSet {
    batches: Vec<(Tensor3<f32>, Tensor3<f32>)>,
}

impl ValidationSet {
    pub fn sample(set: &TrainingSet, cfg: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7661_6c69_6461_7465);
        let table = set.position_table(cfg.outputs_per_segment)?;
        let windows = cfg.val_windows.div_ceil(cfg.outputs_per_segment);
        let per_batch = cfg.batch_size.max(1);
        let mut batches = Vec::new();
        let mut left = windows;
        while left > 0 {
            let b = per_batch.min(left);
            batches.push(set.sample_with_table(&table, &mut rng, b, cfg.outputs_per_segment)?);
            left -= b;
        }
        Ok(Self { batches })
    }

    /// Inference-mode MSE over every validation output.
    pub fn loss(&self, model: &Model) -> Result<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (x, t) in &self.batches {
            let y = model.net.forward(x)?;
            let (l, _) = mse_loss(&y, t)?;
            let n = t.data().len();
            sum += f64::from(l) * n as f64;
            count += n;
        }
        Ok(sum / count as f64)
    }
}

/// Adam training with plateau learning-rate decay, early stopping on the
/// validation loss and best-weights selection.
///
/// `on_epoch` sees every history record as soon as it is complete.
pub fn train(
    model: Model,
    train_set: &TrainingSet,
    val_set: &TrainingSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation splits must be non-empty"));
    }
    let table = train_set.position_table(cfg.outputs_per_segment)?;
    let val = ValidationSet::sample(val_set, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut model = model;
    let shapes: Vec<usize> = model.net.params_mut().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::<f32>::new(&shapes, cfg.lr_init);
    let mut best: Option<(Model, f64, usize)> = None;
    let mut since_best = 0;
    let mut since_change = 0;
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        for batch in 0..cfg.epoch_batches {
            let (x, t) = train_set.sample_with_table(&table, &mut rng, cfg.batch_size, cfg.outputs_per_segment)?;
            let (y, trace) = model.net.forward_train(&x)?;
            let (loss, grad) = mse_loss(&y, &t)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            loss_sum += f64::from(loss);
            let grads = model.net.backward(&trace, &grad)?;
            let flat: Vec<&[f32]> = grads.iter().flat_map(|g| g.slices()).collect();
            adam.step(&mut model.net.params_mut(), &flat)?;
        }
        let val_loss = val.loss(&model)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: cfg.epoch_batches,
            });
        }
        let improved = best.as_ref().is_none_or(|(_, b, _)| val_loss < *b);
        if improved {
            best = Some((model.clone(), val_loss, epoch));
            since_best = 0;
            since_change = 0;
        } else {
            since_best += 1;
            since_change += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / cfg.epoch_batches as f64,
            val_loss,
            lr: adam.lr,
            best: improved,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.6} val {:.6} lr {:.3e}{}",
            record.train_loss,
            val_loss,
            adam.lr,
            if improved { " *" } else { "" }
        );
        on_epoch(&record)?;
        history.push(record);

        if since_best >= cfg.early_stop_patience {
            break;
        }
        if since_change >= cfg.lr_patience && adam.lr > cfg.lr_min {
            adam.lr = (adam.lr * cfg.lr_factor).max(cfg.lr_min);
            since_change = 0;
        }
    }
    let (model, best_val_loss, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_val_loss,
        best_epoch,
        history,
    })
}
