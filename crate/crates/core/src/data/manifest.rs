//! JSON dataset manifests.
//!
//! A manifest lists instance files with their label, modality and split.
//! Relative paths resolve against the manifest's directory. Entries may carry
//! a `pair` id to fix the visual/auditory pairing; without ids, fusion modes
//! pair by class.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binning::BinningOptions;
use super::events::{decode_nmnist, read_portable_events, Event};
use super::pairing::pair_by_class;
use super::{Modality, Sample};
use crate::error::{Error, Result};
use crate::frames::SpikeFrameSequence;
use crate::topology::{Mode, NUM_CLASSES};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub modality: Modality,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<u64>,
}

/// Binning the producer of a dataset recommends for each modality.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningHints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual: Option<BinningOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auditory: Option<BinningOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    #[serde(default)]
    pub binning: BinningHints,
    pub entries: Vec<ManifestEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION,
            binning: BinningHints::default(),
            entries: Vec::new(),
        }
    }
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::from(e).at_path(path))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", manifest.version)).at_path(path));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::from(e).at_path(path))
    }

    pub fn entries_for(&self, split: Split, modality: Modality) -> impl Iterator<Item = &ManifestEntry> + '_ {
        self.entries
            .iter()
            .filter(move |e| e.split == split && e.modality == modality)
    }

    /// Instance counts per label for one split and modality.
    pub fn class_counts(&self, split: Split, modality: Modality) -> Vec<usize> {
        let mut counts = vec![0; NUM_CLASSES];
        for e in self.entries_for(split, modality) {
            if e.label >= counts.len() {
                counts.resize(e.label + 1, 0);
            }
            counts[e.label] += 1;
        }
        counts
    }
}

/// Reads one instance file: `.bin` is N-MNIST, anything else EVST.
pub fn read_instance(path: &Path, modality: Modality) -> Result<Vec<Event>> {
    let events = if path.extension().is_some_and(|e| e == "bin") {
        let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
        decode_nmnist(&bytes).map_err(|e| e.at_path(path))?
    } else {
        read_portable_events(path)?.events
    };
    let channels = modality.channels();
    if let Some(e) = events.iter().find(|e| e.channel as usize >= channels) {
        return Err(Error::ChannelRange {
            channel: e.channel as u32,
            channels: channels as u32,
        }
        .at_path(path));
    }
    Ok(events)
}

fn load_frames(root: &Path, entries: &[&ManifestEntry], binning: &BinningOptions) -> Result<Vec<SpikeFrameSequence>> {
    entries
        .par_iter()
        .map(|e| {
            let path = root.join(&e.path);
            let events = read_instance(&path, e.modality)?;
            binning
                .apply(&events, e.modality.channels())
                .map_err(|err| err.at_path(&path))
        })
        .collect()
}

/// Loads one split as samples for `mode`.
///
/// Unimodal modes keep manifest order. Fusion modes join on `pair` ids when
/// every entry has one (ordered by first appearance) and otherwise pair by
/// class with `pair_seed`.
pub fn load_split(
    manifest_path: impl AsRef<Path>,
    split: Split,
    mode: Mode,
    visual: &BinningOptions,
    auditory: &BinningOptions,
    pair_seed: u64,
) -> Result<Vec<Sample>> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let wanted = |m: Modality| -> Vec<&ManifestEntry> { manifest.entries_for(split, m).collect() };
    let (ve, ae) = (wanted(Modality::Visual), wanted(Modality::Auditory));
    let split_name = format!("{split:?}").to_lowercase();

    let samples = match (mode.uses_visual(), mode.uses_auditory()) {
        (true, false) | (false, true) => {
            let (entries, opts, modality) = if mode.uses_visual() {
                (&ve, visual, Modality::Visual)
            } else {
                (&ae, auditory, Modality::Auditory)
            };
            let frames = load_frames(root, entries, opts)?;
            entries
                .iter()
                .zip(frames)
                .map(|(e, f)| match modality {
                    Modality::Visual => Sample {
                        visual: Some(f),
                        auditory: None,
                        label: e.label,
                    },
                    Modality::Auditory => Sample {
                        visual: None,
                        auditory: Some(f),
                        label: e.label,
                    },
                })
                .collect()
        }
        _ => {
            let vf = load_frames(root, &ve, visual)?;
            let af = load_frames(root, &ae, auditory)?;
            if ve.iter().chain(&ae).all(|e| e.pair.is_some()) && !ve.is_empty() {
                join_on_pair_ids(&ve, vf, &ae, af)?
            } else {
                let v = vf.into_iter().zip(ve.iter().map(|e| e.label)).collect();
                let a = af.into_iter().zip(ae.iter().map(|e| e.label)).collect();
                pair_by_class(v, a, NUM_CLASSES, pair_seed)?
                    .into_iter()
                    .map(|(v, a, label)| Sample {
                        visual: Some(v),
                        auditory: Some(a),
                        label,
                    })
                    .collect()
            }
        }
    };
    if samples.is_empty() {
        return Err(Error::EmptyDataset(format!("no {split_name} instances for {mode}")).at_path(manifest_path));
    }
    Ok(samples)
}

fn join_on_pair_ids(
    ve: &[&ManifestEntry],
    vf: Vec<SpikeFrameSequence>,
    ae: &[&ManifestEntry],
    af: Vec<SpikeFrameSequence>,
) -> Result<Vec<Sample>> {
    let mut auditory: HashMap<u64, (usize, SpikeFrameSequence)> = HashMap::new();
    for (e, f) in ae.iter().zip(af) {
        if auditory.insert(e.pair.unwrap(), (e.label, f)).is_some() {
            return Err(Error::Format(format!(
                "pair id {} appears twice in the auditory set",
                e.pair.unwrap()
            )));
        }
    }
    let mut out = Vec::with_capacity(ve.len());
    for (e, f) in ve.iter().zip(vf) {
        let id = e.pair.unwrap();
        let (label, a) = auditory
            .remove(&id)
            .ok_or_else(|| Error::Format(format!("pair id {id} has no auditory instance")))?;
        if label != e.label {
            return Err(Error::Format(format!(
                "pair id {id} joins label {} with label {label}",
                e.label
            )));
        }
        out.push(Sample {
            visual: Some(f),
            auditory: Some(a),
            label,
        });
    }
    if let Some(id) = auditory.keys().min() {
        return Err(Error::Format(format!("pair id {id} has no visual instance")));
    }
    Ok(out)
}
