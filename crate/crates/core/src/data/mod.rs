//! Event decoding, binning, pairing, synthetic generation and manifests.

pub mod binning;
pub mod events;
pub mod manifest;
pub mod pairing;
pub mod synthetic;

use serde::{Deserialize, Serialize};

pub use binning::{adaptive_width, bin_events, BinWidth, BinningOptions};
pub use events::{
    decode_evst, decode_nmnist, encode_evst, encode_nmnist, read_portable_events, visual_channel,
    write_portable_events, Event, EventStream,
};
pub use manifest::{load_split, Manifest, ManifestEntry, Split};
pub use pairing::{pair_by_class, pair_instances};
pub use synthetic::{generate_synthetic, generate_synthetic_events, Corruption, NoiseLevels, SyntheticConfig};

use crate::error::{Error, Result};
use crate::frames::SpikeFrameSequence;
use crate::topology::{Mode, AUDITORY_CHANNELS, VISUAL_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Auditory,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Auditory => "auditory",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Modality::Visual => VISUAL_CHANNELS,
            Modality::Auditory => AUDITORY_CHANNELS,
        }
    }
}

/// A visual and an auditory instance of the same class.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedInstance {
    pub visual: SpikeFrameSequence,
    pub auditory: SpikeFrameSequence,
    pub label: usize,
}

/// A labelled training or test instance. Unimodal datasets leave the other
/// modality empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub visual: Option<SpikeFrameSequence>,
    pub auditory: Option<SpikeFrameSequence>,
    pub label: usize,
}

fn pick<'a>(
    mode: Mode,
    used: bool,
    stream: &'a Option<SpikeFrameSequence>,
    name: &str,
) -> Result<Option<&'a SpikeFrameSequence>> {
    match (used, stream) {
        (false, _) => Ok(None),
        (true, Some(s)) => Ok(Some(s)),
        (true, None) => Err(Error::Modality(format!(
            "{mode} needs {name} input, the sample has none"
        ))),
    }
}

impl Sample {
    /// The streams `mode` consumes; streams it ignores are passed as `None`.
    pub fn inputs(&self, mode: Mode) -> Result<(Option<&SpikeFrameSequence>, Option<&SpikeFrameSequence>)> {
        Ok((
            pick(mode, mode.uses_visual(), &self.visual, "visual")?,
            pick(mode, mode.uses_auditory(), &self.auditory, "auditory")?,
        ))
    }
}
