//! Glottal closure instant (GCI) detection by fully-convolutional waveform
//! regression, with an LF-model synthetic corpus generator, EGG-based ground
//! truth extraction and epoch-detection metrics.

pub mod egg;
pub mod fcn;
pub mod error;
pub mod fsutil;
pub mod lf;
pub mod metrics;
pub mod nn;
pub mod corpus;
pub mod par;
pub mod signal;
pub mod targets;

pub use error::{Error, Result};
