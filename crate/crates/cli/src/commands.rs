use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use spikefuse::data::manifest::{BinningHints, ManifestEntry, MANIFEST_VERSION};
use spikefuse::data::{
    decode_nmnist, generate_synthetic_events, load_split, read_portable_events, write_portable_events, BinningOptions,
    Event, Manifest, Modality, Split,
};
use spikefuse::stats::{compare_evaluations, text_table};
use spikefuse::topology::{NUM_CLASSES, VISUAL_CHANNELS};
use spikefuse::train::write_metrics_csv;
use spikefuse::{evaluate, train, Checkpoint, Error, Mode, Result, Sample};

use crate::config::RunConfig;

pub const RUN_FILE: &str = "run.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).at_path(dir))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::from(e).at_path(path))
}

fn start_run(cfg: &RunConfig) -> Result<()> {
    create_dir(&cfg.out)?;
    cfg.save(&cfg.out.join(RUN_FILE))
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

/// Samples of one split for `mode`, from the manifest when one is
/// configured and from the synthetic generator otherwise.
pub fn load_samples(cfg: &RunConfig, split: Split, mode: Mode) -> Result<Vec<Sample>> {
    match &cfg.data.manifest {
        Some(path) => {
            let hints = Manifest::load(path)?.binning;
            let visual = cfg
                .binning
                .visual
                .or(hints.visual)
                .unwrap_or(BinningOptions::fixed(3000));
            let auditory = cfg
                .binning
                .auditory
                .or(hints.auditory)
                .unwrap_or(BinningOptions::adaptive());
            load_split(path, split, mode, &visual, &auditory, cfg.data.pair_seed.unwrap_or(0))
        }
        None => {
            let synthetic = &cfg.data.synthetic;
            let (train, test) = generate_synthetic_events(synthetic);
            let chosen = if split == Split::Train { train } else { test };
            chosen
                .iter()
                .map(|inst| {
                    let paired = inst.to_paired(synthetic)?;
                    Ok(Sample {
                        visual: mode.uses_visual().then_some(paired.visual),
                        auditory: mode.uses_auditory().then_some(paired.auditory),
                        label: paired.label,
                    })
                })
                .collect()
        }
    }
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    start_run(cfg)?;
    let spec = cfg.architecture();
    let train_data = load_samples(cfg, Split::Train, cfg.mode)?;
    let test_data = load_samples(cfg, Split::Test, cfg.mode)?;
    log::info!(
        "training {} on {} instances, testing on {}",
        cfg.mode,
        train_data.len(),
        test_data.len()
    );
    let outcome = train(&spec, &train_data, &test_data, &cfg.train)?;
    let ckpt_dir = cfg.out.join("checkpoint");
    outcome.best.save(&ckpt_dir)?;
    write_metrics_csv(cfg.out.join("metrics.csv"), &outcome.metrics)?;
    let best = outcome
        .metrics
        .get(outcome.best.epoch.saturating_sub(1))
        .map_or(0.0, |m| m.test_acc);
    println!(
        "{}: best test accuracy {best:.4} at epoch {} of {}; checkpoint in {}",
        cfg.mode,
        outcome.best.epoch,
        outcome.metrics.len(),
        ckpt_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    checkpoint: &'a Path,
    mode: Mode,
    split: Split,
    instances: usize,
    correct: usize,
    accuracy: f64,
    predictions: &'a [usize],
}

pub fn eval_cmd(cfg: &RunConfig, checkpoint: &Path, split: Split) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    start_run(cfg)?;
    let data = load_samples(cfg, split, ckpt.spec.mode)?;
    let eval = evaluate(&ckpt, &data)?;
    let correct = eval.correct.iter().filter(|&&c| c).count();
    let report = EvalReport {
        checkpoint,
        mode: ckpt.spec.mode,
        split,
        instances: data.len(),
        correct,
        accuracy: eval.accuracy,
        predictions: &eval.predictions,
    };
    write_json(&cfg.out.join("eval.json"), &report)?;
    println!(
        "{} on {} split: accuracy {:.4} ({correct}/{})",
        ckpt.spec.mode,
        split_name(split),
        eval.accuracy,
        data.len()
    );
    Ok(())
}

fn model_name(ckpt: &Checkpoint, dir: &Path) -> String {
    let label = dir
        .canonicalize()
        .ok()
        .and_then(|p| {
            let name = p.file_name()?.to_string_lossy().into_owned();
            // `<run>/checkpoint` is named after the run directory.
            if name == "checkpoint" {
                p.parent()?.file_name().map(|n| n.to_string_lossy().into_owned())
            } else {
                Some(name)
            }
        })
        .unwrap_or_else(|| dir.display().to_string());
    format!("{} ({label})", ckpt.spec.mode)
}

pub fn compare_cmd(cfg: &RunConfig, a: &Path, b: &Path, split: Split, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (ca, cb) = (Checkpoint::load(a)?, Checkpoint::load(b)?);
    start_run(cfg)?;
    // Load with every modality either model needs so both see the same
    // instances in the same order.
    let (ma, mb) = (ca.spec.mode, cb.spec.mode);
    let mode = match (
        ma.uses_visual() || mb.uses_visual(),
        ma.uses_auditory() || mb.uses_auditory(),
    ) {
        (true, true) if ma.is_fusion() => ma,
        (true, true) if mb.is_fusion() => mb,
        (true, true) => Mode::FusionLate,
        (true, false) => Mode::UnimodalVisual,
        _ => Mode::UnimodalAuditory,
    };
    let data = load_samples(cfg, split, mode)?;
    let ea = evaluate(&ca, &data)?;
    let eb = evaluate(&cb, &data)?;
    let report = compare_evaluations(model_name(&ca, a), &ea, model_name(&cb, b), &eb, alpha)?;
    write_json(&cfg.out.join("compare.json"), &report)?;
    print!("{}", text_table(std::slice::from_ref(&report)));
    Ok(())
}

pub fn gen_synthetic_cmd(cfg: &RunConfig) -> Result<()> {
    start_run(cfg)?;
    let synthetic = &cfg.data.synthetic;
    let (train, test) = generate_synthetic_events(synthetic);
    let mut manifest = Manifest {
        version: MANIFEST_VERSION,
        binning: BinningHints {
            visual: Some(BinningOptions {
                num_bins: synthetic.num_bins,
                ..BinningOptions::fixed(synthetic.visual_bin_us)
            }),
            auditory: Some(BinningOptions {
                num_bins: synthetic.num_bins,
                ..BinningOptions::fixed(synthetic.auditory_bin_us)
            }),
        },
        entries: Vec::new(),
    };
    for (split, instances) in [(Split::Train, train), (Split::Test, test)] {
        for modality in [Modality::Visual, Modality::Auditory] {
            create_dir(&cfg.out.join(split_name(split)).join(modality.as_str()))?;
        }
        for (i, inst) in instances.iter().enumerate() {
            for (modality, events) in [(Modality::Visual, &inst.visual), (Modality::Auditory, &inst.auditory)] {
                let rel = PathBuf::from(split_name(split))
                    .join(modality.as_str())
                    .join(format!("{i:05}.evst"));
                write_portable_events(cfg.out.join(&rel), modality.channels() as u16, events)?;
                manifest.entries.push(ManifestEntry {
                    path: rel,
                    label: inst.label,
                    modality,
                    split,
                    pair: Some(i as u64),
                });
            }
        }
    }
    manifest.save(cfg.out.join(MANIFEST_FILE))?;
    println!(
        "wrote {} instances per split to {}",
        synthetic.num_per_class * NUM_CLASSES,
        cfg.out.display()
    );
    Ok(())
}

/// One input file found by `convert`.
struct Found {
    path: PathBuf,
    split: Split,
    label: usize,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::from(e).at_path(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::from(e).at_path(dir))?;
    out.sort();
    Ok(out)
}

fn parse_split_dir(name: &str) -> Option<Split> {
    match name.to_ascii_lowercase().as_str() {
        "train" => Some(Split::Train),
        "test" => Some(Split::Test),
        _ => None,
    }
}

/// Walks `<input>/[train|test/]<label>/<file>`; class directories are
/// named by their digit.
fn find_instances(input: &Path, default_split: Split) -> Result<Vec<Found>> {
    let top = sorted_entries(input)?;
    let split_dirs: Vec<(PathBuf, Split)> = top
        .iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| Some((p.clone(), parse_split_dir(p.file_name()?.to_str()?)?)))
        .collect();
    let roots = if split_dirs.is_empty() {
        vec![(input.to_path_buf(), default_split)]
    } else {
        split_dirs
    };
    let mut found = Vec::new();
    for (root, split) in roots {
        for class_dir in sorted_entries(&root)?.into_iter().filter(|p| p.is_dir()) {
            let label = match class_dir
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.parse().ok())
            {
                Some(l) if l < NUM_CLASSES => l,
                _ => {
                    log::warn!("skipping {}: not a class directory", class_dir.display());
                    continue;
                }
            };
            for path in sorted_entries(&class_dir)?.into_iter().filter(|p| p.is_file()) {
                found.push(Found { path, split, label });
            }
        }
    }
    Ok(found)
}

fn read_any(path: &Path) -> Result<(Vec<Event>, Modality)> {
    if path.extension().is_some_and(|e| e == "bin") {
        let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
        let events = decode_nmnist(&bytes).map_err(|e| e.at_path(path))?;
        Ok((events, Modality::Visual))
    } else {
        let stream = read_portable_events(path)?;
        let modality = if stream.channel_count as usize == VISUAL_CHANNELS {
            Modality::Visual
        } else {
            Modality::Auditory
        };
        Ok((stream.events, modality))
    }
}

fn sort_key(e: &ManifestEntry) -> (u8, &'static str, usize, &Path) {
    (e.split as u8, e.modality.as_str(), e.label, &e.path)
}

pub fn convert_cmd(cfg: &RunConfig, input: &Path, modality: Option<Modality>, split: Split) -> Result<()> {
    let found = find_instances(input, split)?;
    if found.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no instances found in {}",
            input.display()
        )));
    }
    let out = &cfg.out;
    if out
        .canonicalize()
        .ok()
        .is_some_and(|o| input.canonicalize().is_ok_and(|i| o.starts_with(i)))
    {
        return Err(Error::Config(
            "the output directory may not lie inside the input".into(),
        ));
    }
    create_dir(out)?;
    let manifest_path = out.join(MANIFEST_FILE);
    let mut manifest = if manifest_path.exists() {
        Manifest::load(&manifest_path)?
    } else {
        Manifest::default()
    };

    let mut counts = [[0usize; 2]; NUM_CLASSES];
    let mut converted = Vec::with_capacity(found.len());
    for f in &found {
        let (events, detected) = read_any(&f.path)?;
        let modality = modality.unwrap_or(detected);
        let channels = modality.channels();
        if let Some(e) = events.iter().find(|e| e.channel as usize >= channels) {
            return Err(Error::ChannelRange {
                channel: e.channel as u32,
                channels: channels as u32,
            }
            .at_path(&f.path));
        }
        let stem = f.path.file_stem().unwrap_or_default().to_string_lossy();
        let rel = PathBuf::from(split_name(f.split))
            .join(modality.as_str())
            .join(f.label.to_string())
            .join(format!("{stem}.evst"));
        create_dir(out.join(&rel).parent().unwrap())?;
        write_portable_events(out.join(&rel), channels as u16, &events)?;
        counts[f.label][f.split as usize] += 1;
        converted.push(ManifestEntry {
            path: rel,
            label: f.label,
            modality,
            split: f.split,
            pair: None,
        });
    }
    manifest.entries.retain(|e| !converted.iter().any(|c| c.path == e.path));
    manifest.entries.extend(converted);
    manifest.entries.sort_by(|a, b| sort_key(a).cmp(&sort_key(b)));
    manifest.save(&manifest_path)?;

    println!("class  train  test");
    for (label, [train, test]) in counts.iter().enumerate() {
        println!("{label:>5}  {train:>5}  {test:>4}");
    }
    println!("converted {} instances into {}", found.len(), out.display());
    Ok(())
}
