use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::AudioBuffer;
use crate::error::{Error, Result};

const I16_SCALE: f64 = 32768.0;

/// On-disk sample encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

fn wav_err(path: &Path, source: hound::Error) -> Error {
    match source {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::Unsupported | hound::Error::FormatError(_) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: source.to_string(),
        },
        other => Error::Wav {
            path: path.to_path_buf(),
            source: other,
        },
    }
}

/// Reads a PCM16 or float32 WAV file, one buffer per channel.
pub fn read_wav(path: &Path) -> Result<Vec<AudioBuffer>> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let n_ch = usize::from(spec.channels);
    if !(1..=2).contains(&n_ch) {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("{n_ch} channels (expected 1 or 2)"),
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / I16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("{bits}-bit {fmt:?} samples"),
            })
        }
    };
    if interleaved.is_empty() {
        return Err(Error::malformed(path, "empty data chunk"));
    }
    let frames = interleaved.len() / n_ch;
    let mut channels = vec![Vec::with_capacity(frames); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (ch, &s) in channels.iter_mut().zip(frame) {
            ch.push(s);
        }
    }
    channels
        .into_iter()
        .map(|samples| {
            AudioBuffer::new(samples, spec.sample_rate).map_err(|e| Error::malformed(path, e.to_string()))
        })
        .collect()
}

/// Quantizes a sample to int16 after clipping to `[-1, 1 - 1/32768]`.
pub fn quantize_i16(x: f64) -> i16 {
    let clipped = x.clamp(-1.0, 1.0 - 1.0 / I16_SCALE);
    (clipped * I16_SCALE).round() as i16
}

/// Writes equal-length, equal-rate channels as an interleaved WAV file.
pub fn write_wav(path: &Path, channels: &[AudioBuffer], encoding: WavEncoding) -> Result<()> {
    let first = channels
        .first()
        .ok_or_else(|| Error::invalid("write_wav needs at least one channel"))?;
    if channels.len() > u16::MAX as usize {
        return Err(Error::invalid("too many channels"));
    }
    for (i, ch) in channels.iter().enumerate() {
        if ch.len() != first.len() || ch.sample_rate() != first.sample_rate() {
            return Err(Error::invalid(format!(
                "channel {i} has length {} at {} Hz, expected {} at {} Hz",
                ch.len(),
                ch.sample_rate(),
                first.len(),
                first.sample_rate()
            )));
        }
    }
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate: first.sample_rate(),
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    {
        let file = std::io::BufWriter::new(tmp.as_file());
        let mut writer = hound::WavWriter::new(file, spec).map_err(|e| wav_err(path, e))?;
        for i in 0..first.len() {
            for ch in channels {
                let s = ch.samples()[i];
                match encoding {
                    WavEncoding::Pcm16 => writer.write_sample(quantize_i16(s)),
                    WavEncoding::Float32 => writer.write_sample(s as f32),
                }
                .map_err(|e| wav_err(path, e))?;
            }
        }
        writer.finalize().map_err(|e| wav_err(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
