//! DSP substrate: buffers, WAV and marker files, IIR filtering, spline
//! resampling, differentiation and peak picking.

mod audio;
pub mod filter;
mod marks;
mod peaks;
mod spline;
mod wav;

pub use audio::{normalize_peak, AudioBuffer};
pub use filter::{butter_design, decimate, filtfilt, filtfilt_slice, Biquad, FilterKind, SosFilter};
pub use marks::{format_marks, parse_marks, read_marks, write_marks, GciMarks};
pub use peaks::{derivative, find_peak_indices, find_peaks, PeakPickConfig, Polarity};
pub use spline::spline_upsample;
pub use wav::{quantize_i16, read_wav, write_wav, WavEncoding};

/// Sample rate the network and detection pipeline operate at.
pub const PIPELINE_RATE: u32 = 16000;

/// Peak level applied to every file before training and detection.
pub const NORMALIZATION_DB: f64 = -3.0;
