//! Checkpoint directories: `manifest.json` plus `params.bin`, the parameters
//! as raw little-endian `f32` concatenated in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochMetrics, TrainConfig};
use crate::error::{Error, Result};
use crate::params::{ParamShape, ParameterStore};
use crate::topology::{ArchitectureSpec, Network};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    format_version: u32,
    spec: ArchitectureSpec,
    config: TrainConfig,
    epoch: usize,
    metrics: Vec<EpochMetrics>,
    shapes: Vec<ParamShape>,
}

/// Trained parameters with everything needed to rebuild and audit them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ArchitectureSpec,
    pub config: TrainConfig,
    /// Epoch the parameters were taken from (0 = initialisation).
    pub epoch: usize,
    pub metrics: Vec<EpochMetrics>,
    pub params: ParameterStore,
}

impl Checkpoint {
    pub fn network(&self) -> Result<Network> {
        Network::from_spec(&self.spec)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::from(e).at_path(dir))?;
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            spec: self.spec.clone(),
            config: self.config.clone(),
            epoch: self.epoch,
            metrics: self.metrics.clone(),
            shapes: self.params.shapes(),
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::from(e).at_path(&path))?;

        let mut blob = Vec::with_capacity(self.params.num_params() * 4);
        for x in self.params.values() {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
        let path = dir.join(PARAMS_FILE);
        fs::write(&path, blob).map_err(|e| Error::from(e).at_path(&path))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::from(e).at_path(&path))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::from(e).at_path(&path))?;
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(
                Error::Format(format!("unsupported checkpoint format {}", manifest.format_version)).at_path(&path),
            );
        }
        let mut params = Network::from_spec(&manifest.spec)
            .and_then(|n| n.empty_params())
            .map_err(|e| e.at_path(&path))?;
        if params.shapes() != manifest.shapes {
            return Err(Error::Format("declared shapes do not match the architecture".into()).at_path(&path));
        }

        let path = dir.join(PARAMS_FILE);
        let blob = fs::read(&path).map_err(|e| Error::from(e).at_path(&path))?;
        let expected: usize = manifest.shapes.iter().map(ParamShape::numel).sum::<usize>() * 4;
        if blob.len() != expected {
            return Err(Error::Corrupt {
                offset: blob.len().min(expected) as u64,
                reason: format!("expected {expected} bytes of parameters, found {}", blob.len()),
            }
            .at_path(&path));
        }
        let flat: Vec<f64> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        params.assign_flat(&flat)?;
        Ok(Self {
            spec: manifest.spec,
            config: manifest.config,
            epoch: manifest.epoch,
            metrics: manifest.metrics,
            params,
        })
    }
}
