use super::Real;
use crate::error::{Error, Result};

/// Batch of multichannel sequences.
///
/// Indexed as `[batch][channel][time]`, stored channel-major
/// (`[channel][batch][time]`) so per-channel statistics and whole-batch
/// convolutions run over contiguous memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    batch: usize,
    channels: usize,
    time: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(batch: usize, channels: usize, time: usize) -> Self {
        Self {
            batch,
            channels,
            time,
            data: vec![T::ZERO; batch * channels * time],
        }
    }

    /// From channel-major storage.
    pub fn from_channel_major(batch: usize, channels: usize, time: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * channels * time {
            return Err(Error::Shape(format!(
                "{} values for a {batch}x{channels}x{time} tensor",
                data.len()
            )));
        }
        Ok(Self { batch, channels, time, data })
    }

    /// Single-channel batch from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let time = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != time) {
            return Err(Error::Shape("rows have different lengths".into()));
        }
        Ok(Self {
            batch: rows.len(),
            channels: 1,
            time,
            data: rows.concat(),
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.channels, self.time)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    fn offset(&self, b: usize, c: usize) -> usize {
        (c * self.batch + b) * self.time
    }

    pub fn get(&self, b: usize, c: usize, t: usize) -> T {
        self.data[self.offset(b, c) + t]
    }

    pub fn set(&mut self, b: usize, c: usize, t: usize, v: T) {
        let o = self.offset(b, c);
        self.data[o + t] = v;
    }

    pub fn row(&self, b: usize, c: usize) -> &[T] {
        let o = self.offset(b, c);
        &self.data[o..o + self.time]
    }

    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let o = self.offset(b, c);
        &mut self.data[o..o + self.time]
    }

    /// All batch items of one channel, back to back.
    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.batch * self.time;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.batch * self.time;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub fn cast<U: Real>(&self) -> Tensor3<U> {
        Tensor3 {
            batch: self.batch,
            channels: self.channels,
            time: self.time,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}
