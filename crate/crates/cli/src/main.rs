mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spikefuse::data::{Modality, Split};
use spikefuse::stats::DEFAULT_ALPHA_LEVEL;
use spikefuse::{Error, ErrorKind, Mode};

use config::{Overrides, RunConfig};

/// Train and compare unimodal and multimodal spiking networks on event data.
#[derive(Parser)]
#[command(name = "spikefuse", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for initialisation, shuffling, pairing and synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for training and evaluation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an N-MNIST or EVST directory tree (`[train|test/]<digit>/<file>`)
    /// into EVST files plus a manifest.
    Convert {
        #[arg(long)]
        input: PathBuf,
        /// Modality of the input; inferred from each file when omitted.
        #[arg(long, value_parser = parse_modality)]
        modality: Option<Modality>,
        /// Split for inputs without train/test directories.
        #[arg(long, value_parser = parse_split, default_value = "train")]
        split: Split,
    },
    /// Write a synthetic paired dataset as EVST files plus a manifest.
    GenSynthetic {
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        noise_visual: Option<f64>,
        #[arg(long)]
        noise_auditory: Option<f64>,
    },
    /// Train one architecture and save the best checkpoint.
    Train {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Report a checkpoint's accuracy on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
    },
    /// McNemar test between two checkpoints on the same instances.
    Compare {
        checkpoint_a: PathBuf,
        checkpoint_b: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = DEFAULT_ALPHA_LEVEL)]
        alpha: f64,
    },
}

fn parse_mode(s: &str) -> Result<Mode, Error> {
    s.parse()
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split `{s}` (train or test)")),
    }
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    match s {
        "visual" => Ok(Modality::Visual),
        "auditory" => Ok(Modality::Auditory),
        _ => Err(format!("unknown modality `{s}` (visual or auditory)")),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Divergence => 4,
    }
}

/// Without `--config`, eval and compare reuse the `run.json` of the run
/// that produced the first checkpoint so they see the same data.
fn sibling_run_file(checkpoint: &std::path::Path) -> Option<PathBuf> {
    let candidate = checkpoint.parent()?.join(commands::RUN_FILE);
    candidate.is_file().then_some(candidate)
}

fn run(cli: Cli) -> spikefuse::Result<()> {
    if let Some(n) = cli.common.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut overrides = Overrides {
        seed: cli.common.seed,
        out: cli.common.out.clone(),
        ..Default::default()
    };
    let file = cli.common.config.clone();
    match cli.command {
        Command::Convert { input, modality, split } => {
            let cfg = RunConfig::resolve(file.as_deref(), &overrides)?;
            commands::convert_cmd(&cfg, &input, modality, split)
        }
        Command::GenSynthetic {
            per_class,
            noise_visual,
            noise_auditory,
        } => {
            let mut cfg = RunConfig::resolve(file.as_deref(), &overrides)?;
            let synthetic = &mut cfg.data.synthetic;
            if let Some(n) = per_class {
                synthetic.num_per_class = n;
            }
            if let Some(p) = noise_visual {
                synthetic.noise.visual = p;
            }
            if let Some(p) = noise_auditory {
                synthetic.noise.auditory = p;
            }
            for p in [synthetic.noise.visual, synthetic.noise.auditory] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Config(format!("noise {p} must lie in [0, 1]")));
                }
            }
            commands::gen_synthetic_cmd(&cfg)
        }
        Command::Train { mode, manifest, epochs } => {
            overrides.mode = mode;
            overrides.manifest = manifest;
            overrides.epochs = epochs;
            let cfg = RunConfig::resolve(file.as_deref(), &overrides)?;
            commands::train_cmd(&cfg)
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
        } => {
            overrides.manifest = manifest;
            let file = file.or_else(|| sibling_run_file(&checkpoint));
            let mut cfg = RunConfig::resolve(file.as_deref(), &overrides)?;
            if cli.common.out.is_none() {
                cfg.out = checkpoint.join("eval");
            }
            commands::eval_cmd(&cfg, &checkpoint, split)
        }
        Command::Compare {
            checkpoint_a,
            checkpoint_b,
            manifest,
            split,
            alpha,
        } => {
            overrides.manifest = manifest;
            let file = file.or_else(|| sibling_run_file(&checkpoint_a));
            let cfg = RunConfig::resolve(file.as_deref(), &overrides)?;
            commands::compare_cmd(&cfg, &checkpoint_a, &checkpoint_b, split, alpha)
        }
    }
}

fn main() -> ExitCode {
    let env = env_logger::Env::default().filter_or("SPIKEFUSE_LOG", "info");
    env_logger::Builder::from_env(env).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
