use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;

/// Strictly increasing event times in seconds (ground-truth or detected GCIs).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GciMarks(Vec<f64>);

impl GciMarks {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(Error::invalid(format!("non-finite mark {t}")));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "marks not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self(times))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn into_times(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn shifted(&self, dt: f64) -> Self {
        Self(self.0.iter().map(|t| t + dt).collect())
    }

    pub(crate) fn from_sorted_unchecked(times: Vec<f64>) -> Self {
        debug_assert!(times.windows(2).all(|w| w[1] > w[0]));
        Self(times)
    }
}

/// Writes one time per line with six decimals, LF endings.
pub fn write_marks(path: &Path, marks: &GciMarks) -> Result<()> {
    atomic_write(path, |w| {
        for t in marks.times() {
            writeln!(w, "{t:.6}")?;
        }
        Ok(())
    })
}

pub fn format_marks(marks: &GciMarks) -> String {
    marks.times().iter().map(|t| format!("{t:.6}\n")).collect()
}

/// Parses a marker file; blank lines and `#` comments are skipped.
pub fn read_marks(path: &Path) -> Result<GciMarks> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_marks(&text).map_err(|detail| Error::malformed(path, detail))
}

pub fn parse_marks(text: &str) -> std::result::Result<GciMarks, String> {
    let mut times = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: f64 = line
            .parse()
            .map_err(|_| format!("line {}: not a number: {line:?}", lineno + 1))?;
        times.push(t);
    }
    GciMarks::new(times).map_err(|e| e.to_string())
}
