use serde::{Deserialize, Serialize};

use super::events::Event;
use crate::error::{Error, Result};
use crate::frames::{SpikeFrameSequence, DEFAULT_NUM_BINS};

/// How wide each time bin is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinWidth {
    /// Fixed width in microseconds; later events are dropped.
    Fixed(u32),
    /// Per-instance width `ceil(duration / T)` so every event lands in a bin.
    Adaptive,
}

impl BinWidth {
    pub fn resolve(self, events: &[Event], num_bins: usize) -> u32 {
        match self {
            BinWidth::Fixed(w) => w,
            BinWidth::Adaptive => adaptive_width(events, num_bins),
        }
    }
}

/// Smallest width that fits every event into `num_bins` bins.
pub fn adaptive_width(events: &[Event], num_bins: usize) -> u32 {
    let duration = events.iter().map(|e| e.t_us as u64 + 1).max().unwrap_or(1);
    duration.div_ceil(num_bins.max(1) as u64).max(1) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningOptions {
    pub width: BinWidth,
    #[serde(default = "default_num_bins")]
    pub num_bins: usize,
    #[serde(default)]
    pub clip: Option<f32>,
    #[serde(default)]
    pub binarize: bool,
}

fn default_num_bins() -> usize {
    DEFAULT_NUM_BINS
}

impl BinningOptions {
    pub fn fixed(width_us: u32) -> Self {
        Self {
            width: BinWidth::Fixed(width_us),
            num_bins: DEFAULT_NUM_BINS,
            clip: None,
            binarize: false,
        }
    }

    pub fn adaptive() -> Self {
        Self {
            width: BinWidth::Adaptive,
            ..Self::fixed(1)
        }
    }

    pub fn apply(&self, events: &[Event], channels: usize) -> Result<SpikeFrameSequence> {
        let width = self.width.resolve(events, self.num_bins);
        let mut frames = bin_events(events, channels, width, self.num_bins)?;
        if let Some(max) = self.clip {
            frames = frames.clipped(max);
        }
        if self.binarize {
            frames = frames.binarized();
        }
        Ok(frames)
    }
}

/// Counts events per channel in half-open bins `[b*w, (b+1)*w)`. Events at or
/// past `T*w` are dropped.
pub fn bin_events(events: &[Event], channels: usize, bin_width_us: u32, num_bins: usize) -> Result<SpikeFrameSequence> {
    if bin_width_us == 0 {
        return Err(Error::Config("bin width must be at least 1 us".into()));
    }
    if num_bins == 0 {
        return Err(Error::Config("number of bins must be at least 1".into()));
    }
    let mut bins: Vec<Vec<(u32, f32)>> = vec![Vec::new(); num_bins];
    let mut dropped = 0usize;
    for e in events {
        if e.channel as usize >= channels {
            return Err(Error::ChannelRange {
                channel: e.channel as u32,
                channels: channels as u32,
            });
        }
        let b = (e.t_us / bin_width_us) as usize;
        match bins.get_mut(b) {
            Some(bin) => bin.push((e.channel as u32, 1.0)),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::debug!(
            "dropped {dropped} of {} events beyond {num_bins} bins of {bin_width_us} us",
            events.len()
        );
    }
    SpikeFrameSequence::from_bins(channels, bins)
}
