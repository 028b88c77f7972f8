//! Command-line experiment runner.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use samplepairing::harness::{self, ExperimentConfig};
use samplepairing::nn::{self, NetworkSpec};
use samplepairing::schedule;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "samplepairing",
    about = "Train and evaluate image classifiers with pair-averaging data augmentation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a config's validation (or training) split.
    Eval(EvalArgs),
    /// Finite-difference check of the trainer's gradients.
    Gradcheck(GradcheckArgs),
    /// Print the phase sequence a schedule config produces.
    ScheduleDump(ScheduleDumpArgs),
    /// List or write the named experiment presets.
    Preset(PresetArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Path to the experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the data seed (subsets, pools, shuffling).
    #[arg(long)]
    seed_data: Option<u64>,
    /// Override the init seed (weights, dropout).
    #[arg(long)]
    seed_init: Option<u64>,
    /// Override the augmentation seed (crops, flips, partners, weights).
    #[arg(long)]
    seed_aug: Option<u64>,
    /// Suppress the per-epoch progress line.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Config describing the dataset to evaluate on.
    #[arg(long)]
    config: PathBuf,
    /// Evaluate the training split instead of the validation split.
    #[arg(long)]
    train_split: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Maximum acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Classes in the checked network.
    #[arg(long, default_value_t = 3)]
    classes: usize,
}

#[derive(Args)]
struct ScheduleDumpArgs {
    /// Config whose schedule (and epoch count) to dump.
    #[arg(long)]
    config: PathBuf,
    /// Dump ticks 0..limit instead of the config's total epochs.
    #[arg(long)]
    limit: Option<u64>,
}

#[derive(Args)]
struct PresetArgs {
    /// Preset to write; omit to list all presets.
    name: Option<String>,
    /// Directory receiving `<preset>_<config>.toml` files.
    #[arg(long, default_value = "configs")]
    dir: PathBuf,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Gradcheck(args) => gradcheck(args),
        Command::ScheduleDump(args) => schedule_dump(args),
        Command::Preset(args) => preset(args),
    }
}

fn load_config(path: &PathBuf) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(s) = args.seed_data {
        cfg.seeds.data = s;
    }
    if let Some(s) = args.seed_init {
        cfg.seeds.init = s;
    }
    if let Some(s) = args.seed_aug {
        cfg.seeds.augment = s;
    }
    let quiet = args.quiet;
    let (result, out_dir) = harness::run_and_emit(&cfg, args.out.as_deref(), |rec| {
        if !quiet {
            eprintln!(
                "epoch {:>4} [{:>8}] train_err {:.4} train_loss {:.4} val_err {:.4} val_loss {:.4} ({:.1}s)",
                rec.epoch, rec.phase, rec.train_err, rec.train_loss, rec.val_err, rec.val_loss, rec.seconds
            );
        }
    })?;
    let last = result
        .metrics
        .records
        .last()
        .context("run produced no epochs")?;
    println!(
        "done: {} epochs, final val_err {:.4}, artifacts in {}",
        result.metrics.records.len(),
        last.val_err,
        out_dir.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.config)?;
    let (net, _) = nn::load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let loaded = cfg.load_datasets()?;
    let ds = if args.train_split {
        &loaded.train
    } else {
        &loaded.val
    };
    let (err, loss) = harness::evaluate(&net, ds, cfg.network.patch, cfg.train.batch_size)?;
    println!(
        "{}: {} samples, error rate {:.4}, mean loss {:.4}",
        ds.name(),
        ds.len(),
        err,
        loss
    );
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> anyhow::Result<()> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let spec = NetworkSpec::shrunk(args.classes);
    let report = nn::grad_check(&spec, args.epsilon, &mut rng)?;
    println!("{report}");
    if report.max_rel_error >= args.tolerance {
        bail!(
            "gradient check failed: {:.3e} >= tolerance {:.3e}",
            report.max_rel_error,
            args.tolerance
        );
    }
    println!("gradient check passed (tolerance {:.1e})", args.tolerance);
    Ok(())
}

fn schedule_dump(args: ScheduleDumpArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.config)?;
    let limit = args.limit.unwrap_or(cfg.train.total_epochs);
    println!("tick,phase,pairing");
    for t in 0..limit {
        let phase = schedule::phase_at(t, &cfg.schedule);
        println!("{t},{phase},{}", u8::from(phase.pairing_enabled()));
    }
    Ok(())
}

fn preset(args: PresetArgs) -> anyhow::Result<()> {
    match args.name {
        None => {
            for name in harness::presets::PRESET_NAMES {
                let configs = harness::presets::preset(name).expect("listed preset exists");
                println!("{name}: {} configs", configs.len());
                for (label, _) in configs {
                    println!("  {label}");
                }
            }
            Ok(())
        }
        Some(name) => {
            let configs = harness::presets::preset(&name)
                .with_context(|| format!("unknown preset {name}; try `preset` to list"))?;
            std::fs::create_dir_all(&args.dir)?;
            for (label, cfg) in configs {
                let path = args.dir.join(format!("{name}_{label}.toml"));
                std::fs::write(&path, cfg.to_toml())?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}
