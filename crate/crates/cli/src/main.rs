//! Command line driver: runs experiment presets stage by stage or end to
//! end over a shared output directory.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use elastonet::pipeline::{preset_config, Config, Experiment, Stage, PRESETS};

#[derive(Parser)]
#[command(
    name = "elastonet",
    version,
    about = "Data-driven hyperelastic energies, evolving yield surfaces, and implicit stress integration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every stage command
#[derive(Args)]
struct RunOpts {
    /// Configuration file (flat key = value text with [sections])
    #[arg(long)]
    config: Option<PathBuf>,

    /// Preset name providing the base configuration
    #[arg(long)]
    preset: Option<String>,

    /// Seed override for all generators and trainers
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory shared by all stages
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Shrink all counts for a fast smoke run
    #[arg(long)]
    smoke: bool,

    /// Validate the configuration and print the plan without executing
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate datasets (energy grids, yield exploration, loading paths)
    GenData(RunOpts),
    /// Train energy networks on the generated grids
    TrainEnergy(RunOpts),
    /// Train the yield level-set network
    TrainYield(RunOpts),
    /// Train the plastic flow network and the black-box baseline
    TrainFlow(RunOpts),
    /// Drive the trained material models along the evaluation protocols
    Simulate(RunOpts),
    /// Compute comparison metrics against the closed-form oracles
    Compare(RunOpts),
    /// Render SVG plots from the tables on disk
    Export(RunOpts),
    /// Run every stage in order
    Run(RunOpts),
    /// List the built-in presets
    Presets,
}

fn resolve(opts: &RunOpts) -> Result<Experiment> {
    let mut cfg = match (&opts.preset, &opts.config) {
        (Some(name), _) => preset_config(name).with_context(|| format!("preset {name:?}"))?,
        (None, Some(_)) => Config::new(),
        (None, None) => bail!("provide --preset, --config, or both"),
    };
    if let Some(path) = &opts.config {
        let overrides = Config::load(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.merge(&overrides);
    }
    if let Some(seed) = opts.seed {
        cfg.set("experiment", "seed", &seed.to_string());
    }
    if opts.smoke {
        cfg.set("experiment", "smoke", "true");
    }
    Experiment::new(cfg, &opts.out).context("invalid configuration")
}

fn run(opts: &RunOpts, stage: Option<Stage>) -> Result<()> {
    let exp = resolve(opts)?;
    if opts.dry_run {
        for line in exp.plan()? {
            println!("{line}");
        }
        return Ok(());
    }
    match stage {
        Some(stage) => {
            exp.run_stage(stage).with_context(|| format!("stage {}", stage.name()))?;
            println!("{} done -> {}", stage.name(), exp.out.display());
        }
        None => {
            exp.run_all().context("experiment run")?;
            println!("all stages done -> {}", exp.out.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(o) => run(&o, Some(Stage::GenData)),
        Command::TrainEnergy(o) => run(&o, Some(Stage::TrainEnergy)),
        Command::TrainYield(o) => run(&o, Some(Stage::TrainYield)),
        Command::TrainFlow(o) => run(&o, Some(Stage::TrainFlow)),
        Command::Simulate(o) => run(&o, Some(Stage::Simulate)),
        Command::Compare(o) => run(&o, Some(Stage::Compare)),
        Command::Export(o) => run(&o, Some(Stage::Export)),
        Command::Run(o) => run(&o, None),
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(())
        }
    }
}
