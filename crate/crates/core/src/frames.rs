//! Time-major sequences: dense buffers used by the network and sparse
//! event-count frames used for network input.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Bin count per instance used throughout unless configured otherwise.
pub const DEFAULT_NUM_BINS: usize = 100;

/// Dense row-major `[steps x width]` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    steps: usize,
    width: usize,
    data: Vec<f64>,
}

impl Sequence {
    pub fn zeros(steps: usize, width: usize) -> Self {
        Self {
            steps,
            width,
            data: vec![0.0; steps * width],
        }
    }

    pub fn from_vec(steps: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len("sequence data", steps * width, data.len())?;
        Ok(Self { steps, width, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            check_len("sequence row", width, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self {
            steps: rows.len(),
            width,
            data,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.width + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Per-bin event counts, `[T x C]`, stored sparsely (compressed rows).
///
/// All values are nonnegative. Event frames are overwhelmingly zero, so the
/// network consumes them row by row without densifying.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeFrameSequence {
    steps: usize,
    channels: usize,
    row_ptr: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f32>,
}

impl SpikeFrameSequence {
    pub fn zeros(steps: usize, channels: usize) -> Self {
        Self {
            steps,
            channels,
            row_ptr: vec![0; steps + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// Builds a sequence from per-bin `(channel, value)` lists. Zero values
    /// are dropped and duplicate channels within a bin are summed.
    pub fn from_bins(channels: usize, bins: Vec<Vec<(u32, f32)>>) -> Result<Self> {
        let steps = bins.len();
        let mut row_ptr = Vec::with_capacity(steps + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut bin in bins {
            bin.sort_unstable_by_key(|&(c, _)| c);
            for (c, v) in bin {
                if c as usize >= channels {
                    return Err(Error::ChannelRange {
                        channel: c,
                        channels: channels as u32,
                    });
                }
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Format(format!("frame value {v} is not a nonnegative count")));
                }
                if v == 0.0 {
                    continue;
                }
                let start = *row_ptr.last().unwrap() as usize;
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len() as u32);
        }
        Ok(Self {
            steps,
            channels,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn from_dense(seq: &Sequence) -> Result<Self> {
        let bins = (0..seq.steps())
            .map(|t| {
                seq.row(t)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c as u32, v as f32))
                    .collect()
            })
            .collect();
        Self::from_bins(seq.width(), bins)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Nonzero entries of bin `t` as `(channel, value)`.
    pub fn row(&self, t: usize) -> impl Iterator<Item = (usize, f32)> + '_ {
        let (a, b) = (self.row_ptr[t] as usize, self.row_ptr[t + 1] as usize);
        self.cols[a..b]
            .iter()
            .zip(&self.vals[a..b])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, t: usize, c: usize) -> f32 {
        self.row(t).find(|&(ch, _)| ch == c).map_or(0.0, |(_, v)| v)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Sum of all entries.
    pub fn total(&self) -> f64 {
        self.vals.iter().map(|&v| v as f64).sum()
    }

    /// Per-channel sums over time.
    pub fn channel_totals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        for (&c, &v) in self.cols.iter().zip(&self.vals) {
            out[c as usize] += v as f64;
        }
        out
    }

    pub fn to_dense(&self) -> Sequence {
        let mut seq = Sequence::zeros(self.steps, self.channels);
        self.write_dense(&mut seq, 0);
        seq
    }

    /// Writes this sequence into `dst` starting at channel `offset`.
    pub(crate) fn write_dense(&self, dst: &mut Sequence, offset: usize) {
        for t in 0..self.steps {
            let row = dst.row_mut(t);
            for (c, v) in self.row(t) {
                row[offset + c] = v as f64;
            }
        }
    }

    pub fn clipped(mut self, max: f32) -> Self {
        for v in &mut self.vals {
            *v = v.min(max);
        }
        self
    }

    pub fn binarized(mut self) -> Self {
        for v in &mut self.vals {
            *v = 1.0;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_dense_agree() {
        let dense = Sequence::from_rows(&[vec![0.0, 2.0, 0.0], vec![1.0, 0.0, 3.0]]).unwrap();
        let sparse = SpikeFrameSequence::from_dense(&dense).unwrap();
        assert_eq!(sparse.nnz(), 3);
        assert_eq!(sparse.get(1, 2), 3.0);
        assert_eq!(sparse.get(0, 0), 0.0);
        assert_eq!(sparse.to_dense(), dense);
        assert_eq!(sparse.total(), 6.0);
        assert_eq!(sparse.channel_totals(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn duplicate_channels_are_summed() {
        let s = SpikeFrameSequence::from_bins(4, vec![vec![(2, 1.0), (1, 1.0), (2, 1.0)]]).unwrap();
        assert_eq!(s.get(0, 2), 2.0);
        assert_eq!(s.nnz(), 2);
    }

    #[test]
    fn rejects_negative_and_out_of_range() {
        assert!(SpikeFrameSequence::from_bins(4, vec![vec![(4, 1.0)]]).is_err());
        assert!(SpikeFrameSequence::from_bins(4, vec![vec![(0, -1.0)]]).is_err());
    }

    #[test]
    fn clip_and_binarize() {
        let s = SpikeFrameSequence::from_bins(2, vec![vec![(0, 5.0), (1, 1.0)]]).unwrap();
        assert_eq!(s.clone().clipped(2.0).get(0, 0), 2.0);
        assert_eq!(s.binarized().get(0, 0), 1.0);
    }
}
