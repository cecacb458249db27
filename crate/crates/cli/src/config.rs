//! Run configuration: one JSON document covering architecture, training,
//! data and binning. Unknown keys are rejected at every level.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spikefuse::data::{BinningOptions, SyntheticConfig};
use spikefuse::{ArchitectureSpec, Error, Mode, Result, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    /// Full topology. When absent, the default for `mode` is used with
    /// every hidden width divided by `width_divisor`.
    pub architecture: Option<ArchitectureSpec>,
    pub width_divisor: usize,
    /// Master seed. Overrides `train.seed` and `data.synthetic.seed`.
    pub seed: Option<u64>,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub binning: BinningConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::FusionLate,
            architecture: None,
            width_divisor: 1,
            seed: None,
            train: TrainConfig::default(),
            data: DataConfig::default(),
            binning: BinningConfig::default(),
            out: PathBuf::from("runs/latest"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset manifest. Without one, data is generated in memory from
    /// `synthetic`.
    pub manifest: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    /// Seed for class-wise pairing of manifests without pair ids; defaults
    /// to the master seed.
    pub pair_seed: Option<u64>,
}

/// Per-modality binning. Unset entries fall back to the manifest's hints,
/// then to 3 ms fixed bins for vision and adaptive bins for audio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinningConfig {
    pub visual: Option<BinningOptions>,
    pub auditory: Option<BinningOptions>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub manifest: Option<PathBuf>,
    pub epochs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()).at_path(path))
    }

    /// Applies flag > file > default precedence, fills in derived values
    /// and validates everything before any work starts.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        if let Some(mode) = overrides.mode {
            cfg.mode = mode;
        }
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        if let Some(manifest) = &overrides.manifest {
            cfg.data.manifest = Some(manifest.clone());
        }
        if let Some(epochs) = overrides.epochs {
            cfg.train.epochs = epochs;
        }
        let seed = overrides.seed.or(cfg.seed).unwrap_or(cfg.train.seed);
        cfg.seed = Some(seed);
        cfg.train.seed = seed;
        cfg.data.synthetic.seed = seed;
        cfg.data.pair_seed.get_or_insert(seed);

        let spec = cfg.architecture();
        cfg.architecture = Some(spec);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn architecture(&self) -> ArchitectureSpec {
        match &self.architecture {
            Some(spec) => spec.clone(),
            None => ArchitectureSpec::default_for(self.mode).scaled_down(self.width_divisor.max(1)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_divisor == 0 {
            return Err(Error::Config("width_divisor must be at least 1".into()));
        }
        let spec = self.architecture();
        if spec.mode != self.mode {
            return Err(Error::Config(format!(
                "architecture.mode is {} but mode is {}",
                spec.mode, self.mode
            )));
        }
        spec.validate()?;
        self.train.validate()?;
        for opts in [self.binning.visual, self.binning.auditory].into_iter().flatten() {
            if opts.num_bins == 0 {
                return Err(Error::Config("binning num_bins must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::from(e).at_path(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RunConfig::resolve(None, &Overrides::default()).unwrap();
        assert_eq!(cfg.seed, Some(0));
        assert_eq!(
            cfg.architecture.unwrap(),
            ArchitectureSpec::default_for(Mode::FusionLate)
        );
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"seed": 5, "mode": "fusion-early", "train": {"epochs": 7}}"#).unwrap();
        let cfg = RunConfig::resolve(Some(&path), &Overrides::default()).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed, cfg.data.synthetic.seed), (Some(5), 5, 5));
        assert_eq!(
            (cfg.mode, cfg.train.epochs, cfg.train.batch_size),
            (Mode::FusionEarly, 7, 64)
        );

        let flags = Overrides {
            seed: Some(9),
            mode: Some(Mode::UnimodalVisual),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!((cfg.train.seed, cfg.mode), (9, Mode::UnimodalVisual));
        assert_eq!(cfg.data.pair_seed, Some(9));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        for text in [
            r#"{"train": {"epochz": 3}}"#,
            r#"{"epochz": 3}"#,
            r#"{"data": {"synthetic": {"nois": 1}}}"#,
        ] {
            fs::write(&path, text).unwrap();
            let err = RunConfig::resolve(Some(&path), &Overrides::default()).unwrap_err();
            assert_eq!(err.kind(), spikefuse::ErrorKind::Config, "{text}");
        }
        let err = RunConfig::resolve(Some(&path), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("nois"), "{err}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let cfg = RunConfig::resolve(
            None,
            &Overrides {
                seed: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        cfg.save(&path).unwrap();
        assert_eq!(RunConfig::resolve(Some(&path), &Overrides::default()).unwrap(), cfg);
    }
}
