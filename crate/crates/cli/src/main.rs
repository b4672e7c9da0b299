//! `ecgfuse`: cleanse, rebalance, perturb and classify 12-lead ECG datasets.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ecg_fusion::classify::{Activation, Loss};
use ecg_fusion::noise::NoiseKind;
use ecg_fusion::Error;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "ecgfuse",
    version,
    about = "Wavelet-fusion rebalancing for 12-lead ECG datasets"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Bring records to 12x5000, padding short ones from their PCA reconstruction.
    Clean(CleanArgs),
    /// Build class feature libraries and write a balanced train/test set.
    Rebalance(RebalanceArgs),
    /// Write noisy copies of a rebalanced test set.
    Noise(NoiseArgs),
    /// Cross-validate and test the classifier on a rebalanced dataset.
    TrainEval(TrainEvalArgs),
    /// Imbalanced vs oversampled vs rebalanced training, over several seeds.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    CpscMini,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
    /// Records per class, comma separated.
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    #[arg(long, value_enum, conflicts_with_all = ["classes", "counts"])]
    preset: Option<Preset>,
    /// Record length range in samples, as `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    range: Option<Vec<usize>>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CleanArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// PCA components used for padding.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    components: Option<u64>,
}

#[derive(Debug, Args)]
struct FusionArgs {
    /// Proportion of each class fused pairwise, in (0, 1].
    #[arg(long, value_parser = parse_delta)]
    delta: Option<f64>,
    /// Feature libraries per class.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    p: Option<u64>,
    #[arg(long, value_parser = parse_fraction)]
    train_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RebalanceArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    fusion: FusionArgs,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    /// Output directory of `rebalance`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "kind")]
    kinds: Vec<NoiseKind>,
    #[arg(long = "snr-db", allow_negative_numbers = true)]
    levels: Vec<f64>,
    /// CSV noise record (one row, or one row per lead) used instead of the models.
    #[arg(long)]
    noise_file: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct NetArgs {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batches per epoch; 0 means one full pass.
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    net_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ActivationArg {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    CrossEntropy,
    SquaredError,
}

#[derive(Debug, Args)]
struct TrainEvalArgs {
    /// Output directory of `rebalance`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    folds: Option<u64>,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: Option<u64>,
    #[command(flatten)]
    fusion: FusionArgs,
    #[command(flatten)]
    net: NetArgs,
}

fn parse_delta(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1]"))
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}

impl FusionArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = self.delta {
            cfg.fusion.delta = Some(d);
        }
        if let Some(p) = self.p {
            cfg.fusion.p = p as usize;
        }
        if let Some(f) = self.train_fraction {
            cfg.fusion.train_fraction = f;
        }
        if let Some(s) = self.seed {
            cfg.fusion.seed = s;
        }
    }
}

impl NetArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let n = &mut cfg.net;
        if let Some(h) = &self.hidden {
            n.hidden = h.clone();
        }
        if let Some(a) = self.activation {
            n.activation = match a {
                ActivationArg::Relu => Activation::Relu,
                ActivationArg::Identity => Activation::Identity,
            };
        }
        if let Some(l) = self.loss {
            n.loss = match l {
                LossArg::CrossEntropy => Loss::CrossEntropy,
                LossArg::SquaredError => Loss::SquaredError,
            };
        }
        if let Some(v) = self.learning_rate {
            n.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            n.batch_size = v;
        }
        if let Some(v) = self.epochs {
            n.epochs = v;
        }
        if let Some(v) = self.steps_per_epoch {
            n.steps_per_epoch = (v > 0).then_some(v);
        }
        if let Some(v) = self.net_seed {
            n.seed = v;
        }
    }
}

/// Merges the flags of `command` into `cfg`.
fn resolve(command: &Command, cfg: &mut RunConfig) -> Result<(), Error> {
    match command {
        Command::Synth(a) => {
            cfg.command = "synth".into();
            cfg.paths.output = Some(a.out.clone());
            if let Some(Preset::CpscMini) = a.preset {
                cfg.synth.preset = Some("cpsc-mini".into());
            }
            if let Some(c) = &a.counts {
                cfg.synth.counts = c.clone();
                cfg.synth.classes = c.len();
            }
            if let Some(k) = a.classes {
                cfg.synth.classes = k;
            }
            if let Some(r) = &a.range {
                match r.as_slice() {
                    [lo, hi] => cfg.synth.range = (*lo, *hi),
                    [n] => cfg.synth.range = (*n, *n),
                    _ => return Err(Error::argument("--range takes `lo,hi` or a single length")),
                }
            }
            if let Some(s) = a.separation {
                cfg.synth.separation = s;
            }
            if let Some(s) = a.seed {
                cfg.synth.seed = s;
            }
            if cfg.synth.preset.is_none() && cfg.synth.classes != cfg.synth.counts.len() {
                return Err(Error::argument(format!(
                    "--classes {} does not match the {} values given to --counts",
                    cfg.synth.classes,
                    cfg.synth.counts.len()
                )));
            }
        }
        Command::Clean(a) => {
            cfg.command = "clean".into();
            cfg.paths.input = Some(a.manifest.clone());
            cfg.paths.output = Some(a.out.clone());
            if let Some(c) = a.components {
                cfg.cleanse.components = c as usize;
            }
        }
        Command::Rebalance(a) => {
            cfg.command = "rebalance".into();
            cfg.paths.input = Some(a.manifest.clone());
            cfg.paths.output = Some(a.out.clone());
            a.fusion.apply(cfg);
        }
        Command::Noise(a) => {
            cfg.command = "noise".into();
            cfg.paths.input = Some(a.dataset.clone());
            cfg.paths.output = Some(a.out.clone());
            if !a.kinds.is_empty() {
                cfg.noise.kinds = a.kinds.clone();
            }
            if !a.levels.is_empty() {
                cfg.noise.levels = a.levels.clone();
            }
            if let Some(f) = &a.noise_file {
                cfg.noise.noise_file = Some(f.clone());
            }
            if let Some(s) = a.seed {
                cfg.noise.seed = s;
            }
        }
        Command::TrainEval(a) => {
            cfg.command = "train-eval".into();
            cfg.paths.input = Some(a.dataset.clone());
            cfg.paths.output = Some(a.out.clone());
            if let Some(f) = a.folds {
                cfg.folds = f as usize;
            }
            a.net.apply(cfg);
        }
        Command::Compare(a) => {
            cfg.command = "compare".into();
            cfg.paths.input = Some(a.manifest.clone());
            cfg.paths.output = Some(a.out.clone());
            if let Some(s) = a.seeds {
                cfg.seeds = s as usize;
            }
            a.fusion.apply(cfg);
            a.net.apply(cfg);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Read { .. } | Error::Format { .. } | Error::Json { .. } | Error::Data(_) | Error::Argument(_) => 1,
        Error::Write { .. } => 2,
        Error::Internal(_) | Error::Diverged { .. } | Error::Stage { .. } => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| Error::internal(e.to_string()))?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    resolve(&cli.command, &mut cfg)?;
    log::debug!("resolved config: {cfg:?}");
    commands::dispatch(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
