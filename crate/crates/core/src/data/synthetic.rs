//! Synthetic paired event datasets with class-specific Poisson templates.
//!
//! Visual instances show a Gaussian blob at a class-dependent position that
//! drifts along a class-independent path. Auditory instances show a band of
//! cochlear channels around a class-dependent centre that switches on at a
//! class-dependent bin and chirps slowly upward. Counts per bin and channel
//! are Poisson; events are spread uniformly inside their bin.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::binning::bin_events;
use super::events::{visual_channel, Event, NMNIST_SIDE};
use super::PairedInstance;
use crate::error::Result;
use crate::frames::DEFAULT_NUM_BINS;
use crate::topology::{AUDITORY_CHANNELS, NUM_CLASSES, VISUAL_CHANNELS};

/// Per-modality probability that an instance's template is corrupted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseLevels {
    pub visual: f64,
    pub auditory: f64,
}

/// What a corrupted modality shows instead of its own class template.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corruption {
    /// Equal-weight mixture of all class templates at the same total rate,
    /// so the modality carries no label information.
    #[default]
    Uninformative,
    /// Template of a uniformly drawn wrong class.
    WrongClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Instances per class in each of the train and test splits.
    pub num_per_class: usize,
    pub noise: NoiseLevels,
    pub corruption: Corruption,
    pub num_bins: usize,
    pub visual_bin_us: u32,
    pub auditory_bin_us: u32,
    /// Peak expected count per pixel, polarity and bin at the blob centre.
    pub visual_peak_rate: f64,
    /// Peak expected count per cochlear channel and bin at the band centre.
    pub auditory_peak_rate: f64,
    /// Expected background count per channel and bin.
    pub background_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_per_class: 20,
            noise: NoiseLevels::default(),
            corruption: Corruption::default(),
            num_bins: DEFAULT_NUM_BINS,
            visual_bin_us: 3000,
            auditory_bin_us: 7000,
            visual_peak_rate: 6.0,
            auditory_peak_rate: 5.0,
            background_rate: 0.002,
            seed: 0,
        }
    }
}

const BLOB_SIGMA: f64 = 1.5;
const DRIFT_AMPLITUDE: f64 = 2.5;
const BAND_SIGMA: f64 = 6.0;
const BAND_DURATION: usize = 50;
const CHIRP_PER_BIN: f64 = 0.4;

/// Blob centre for `class` at bin `b` of `num_bins`.
fn blob_centre(class: usize, b: usize, num_bins: usize) -> (f64, f64) {
    let phase = 2.0 * PI * b as f64 / num_bins as f64;
    let x = 5.0 + 6.0 * (class % 5) as f64 + DRIFT_AMPLITUDE * phase.sin();
    let y = 10.0 + 14.0 * (class / 5) as f64 + DRIFT_AMPLITUDE * (2.0 * phase).sin();
    (x, y)
}

/// Onset bin of the auditory band, scaled to `num_bins`.
fn band_onset(class: usize, num_bins: usize) -> usize {
    (4 + 3 * class) * num_bins / DEFAULT_NUM_BINS
}

fn band_centre(class: usize, b: usize, num_bins: usize) -> Option<f64> {
    let onset = band_onset(class, num_bins);
    let duration = (BAND_DURATION * num_bins / DEFAULT_NUM_BINS).max(1);
    (b >= onset && b < onset + duration).then(|| 35.0 + 70.0 * class as f64 + CHIRP_PER_BIN * (b - onset) as f64)
}

/// Adds `(channel, rate)` for one visual template at bin `b`.
fn visual_rates(class: usize, b: usize, cfg: &SyntheticConfig, scale: f64, out: &mut Vec<(u16, f64)>) {
    let (cx, cy) = blob_centre(class, b, cfg.num_bins);
    let r = (3.0 * BLOB_SIGMA).ceil() as i64;
    let (x0, y0) = (cx.round() as i64, cy.round() as i64);
    for y in (y0 - r).max(0)..=(y0 + r).min(NMNIST_SIDE as i64 - 1) {
        for x in (x0 - r).max(0)..=(x0 + r).min(NMNIST_SIDE as i64 - 1) {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            let rate = scale * cfg.visual_peak_rate * (-d2 / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp();
            for p in 0..2 {
                out.push((visual_channel(x as usize, y as usize, p), rate));
            }
        }
    }
}

fn auditory_rates(class: usize, b: usize, cfg: &SyntheticConfig, scale: f64, out: &mut Vec<(u16, f64)>) {
    let Some(centre) = band_centre(class, b, cfg.num_bins) else {
        return;
    };
    let r = (3.0 * BAND_SIGMA).ceil() as i64;
    let c0 = centre.round() as i64;
    for c in (c0 - r).max(0)..=(c0 + r).min(AUDITORY_CHANNELS as i64 - 1) {
        let d2 = (c as f64 - centre).powi(2);
        out.push((
            c as u16,
            scale * cfg.auditory_peak_rate * (-d2 / (2.0 * BAND_SIGMA * BAND_SIGMA)).exp(),
        ));
    }
}

type RateFn = fn(usize, usize, &SyntheticConfig, f64, &mut Vec<(u16, f64)>);

/// Which template an instance's modality shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Template {
    Class(usize),
    Mixture,
}

fn choose_template(rng: &mut ChaCha8Rng, label: usize, noise: f64, corruption: Corruption) -> Template {
    if !rng.gen_bool(noise.clamp(0.0, 1.0)) {
        return Template::Class(label);
    }
    match corruption {
        Corruption::Uninformative => Template::Mixture,
        Corruption::WrongClass => {
            let k = rng.gen_range(0..NUM_CLASSES - 1);
            Template::Class(if k >= label { k + 1 } else { k })
        }
    }
}

fn sample_stream(
    rng: &mut ChaCha8Rng,
    template: Template,
    channels: usize,
    bin_us: u32,
    rates: RateFn,
    cfg: &SyntheticConfig,
) -> Vec<Event> {
    let mut events = Vec::new();
    let mut buf = Vec::new();
    let background = cfg.background_rate * channels as f64;
    for b in 0..cfg.num_bins {
        buf.clear();
        match template {
            Template::Class(k) => rates(k, b, cfg, 1.0, &mut buf),
            Template::Mixture => {
                for k in 0..NUM_CLASSES {
                    rates(k, b, cfg, 1.0 / NUM_CLASSES as f64, &mut buf);
                }
            }
        }
        let start = b as u32 * bin_us;
        let mut emit = |rng: &mut ChaCha8Rng, channel: u16, lambda: f64| {
            if lambda <= 0.0 {
                return;
            }
            let n = Poisson::new(lambda).unwrap().sample(rng) as usize;
            for _ in 0..n {
                events.push(Event::new(start + rng.gen_range(0..bin_us), channel));
            }
        };
        for &(c, lambda) in &buf {
            emit(rng, c, lambda);
        }
        if background > 0.0 {
            let n = Poisson::new(background).unwrap().sample(rng) as usize;
            for _ in 0..n {
                let c = rng.gen_range(0..channels) as u16;
                events.push(Event::new(start + rng.gen_range(0..bin_us), c));
            }
        }
    }
    events.sort_unstable();
    events
}

/// One generated instance as raw event streams.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub visual: Vec<Event>,
    pub auditory: Vec<Event>,
    pub label: usize,
    pub visual_corrupted: bool,
    pub auditory_corrupted: bool,
}

fn generate_split(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<SyntheticInstance> {
    let mut out = Vec::with_capacity(cfg.num_per_class * NUM_CLASSES);
    for _ in 0..cfg.num_per_class {
        for label in 0..NUM_CLASSES {
            let mut inst_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            let vt = choose_template(&mut inst_rng, label, cfg.noise.visual, cfg.corruption);
            let at = choose_template(&mut inst_rng, label, cfg.noise.auditory, cfg.corruption);
            let visual = sample_stream(&mut inst_rng, vt, VISUAL_CHANNELS, cfg.visual_bin_us, visual_rates, cfg);
            let auditory = sample_stream(
                &mut inst_rng,
                at,
                AUDITORY_CHANNELS,
                cfg.auditory_bin_us,
                auditory_rates,
                cfg,
            );
            out.push(SyntheticInstance {
                visual,
                auditory,
                label,
                visual_corrupted: vt != Template::Class(label),
                auditory_corrupted: at != Template::Class(label),
            });
        }
    }
    out
}

/// Train and test splits as event streams, each holding `num_per_class`
/// instances per class with labels cycling 0..9.
pub fn generate_synthetic_events(cfg: &SyntheticConfig) -> (Vec<SyntheticInstance>, Vec<SyntheticInstance>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = generate_split(cfg, &mut rng);
    let test = generate_split(cfg, &mut rng);
    (train, test)
}

impl SyntheticInstance {
    pub fn to_paired(&self, cfg: &SyntheticConfig) -> Result<PairedInstance> {
        Ok(PairedInstance {
            visual: bin_events(&self.visual, VISUAL_CHANNELS, cfg.visual_bin_us, cfg.num_bins)?,
            auditory: bin_events(&self.auditory, AUDITORY_CHANNELS, cfg.auditory_bin_us, cfg.num_bins)?,
            label: self.label,
        })
    }
}

/// Binned train and test splits.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Vec<PairedInstance>, Vec<PairedInstance>)> {
    let (train, test) = generate_synthetic_events(cfg);
    let bin = |split: Vec<SyntheticInstance>| split.iter().map(|i| i.to_paired(cfg)).collect::<Result<Vec<_>>>();
    Ok((bin(train)?, bin(test)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: NoiseLevels, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            num_per_class: 2,
            noise,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic_events(&small(NoiseLevels::default(), 3));
        let b = generate_synthetic_events(&small(NoiseLevels::default(), 3));
        let c = generate_synthetic_events(&small(NoiseLevels::default(), 4));
        assert_eq!(a, b);
        assert_ne!(a.0[0].visual, c.0[0].visual);
    }

    #[test]
    fn streams_are_valid() {
        let (train, test) = generate_synthetic_events(&small(NoiseLevels::default(), 1));
        assert_eq!(train.len(), 20);
        assert_eq!(test.len(), 20);
        for inst in train.iter().chain(&test) {
            assert!(inst.visual.windows(2).all(|w| w[0].t_us <= w[1].t_us));
            assert!(inst
                .visual
                .iter()
                .all(|e| (e.channel as usize) < VISUAL_CHANNELS && e.t_us < 300_000));
            assert!(inst
                .auditory
                .iter()
                .all(|e| (e.channel as usize) < AUDITORY_CHANNELS && e.t_us < 700_000));
            assert!(!inst.visual.is_empty() && !inst.auditory.is_empty());
        }
    }

    #[test]
    fn corruption_flags_follow_noise() {
        let cfg = small(
            NoiseLevels {
                visual: 1.0,
                auditory: 0.0,
            },
            2,
        );
        let (train, _) = generate_synthetic_events(&cfg);
        assert!(train.iter().all(|i| i.visual_corrupted && !i.auditory_corrupted));
    }

    #[test]
    fn wrong_class_never_picks_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for label in 0..NUM_CLASSES {
            for _ in 0..50 {
                let t = choose_template(&mut rng, label, 1.0, Corruption::WrongClass);
                assert!(matches!(t, Template::Class(k) if k != label && k < NUM_CLASSES));
            }
        }
    }

    #[test]
    fn bands_and_blobs_stay_inside_sensors() {
        for k in 0..NUM_CLASSES {
            for b in 0..DEFAULT_NUM_BINS {
                let (x, y) = blob_centre(k, b, DEFAULT_NUM_BINS);
                assert!((0.0..34.0).contains(&x) && (0.0..34.0).contains(&y));
                if let Some(c) = band_centre(k, b, DEFAULT_NUM_BINS) {
                    assert!(c < AUDITORY_CHANNELS as f64);
                }
            }
        }
    }
}
