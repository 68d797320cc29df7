use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bnscope::harness::{commands, parse_config, ExperimentConfig};
use bnscope::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bnscope", version, about = "Batch-norm training dynamics, gradient noise and product-matrix spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (`key = value` lines). Defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; falls back to the config's `output`, then `bnscope-out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train, sweeping learning rates if configured, with scheduled diagnostics.
    Train(Common),
    /// Relative loss along the negative gradient at init and after training.
    ProbeLoss(Common),
    /// Tabulate the limiting squared-singular-value densities.
    RmtDensity(Common),
    /// Sample product-matrix spectra and compare with the limiting CDF.
    RmtSpectrum(Common),
    /// Condition numbers and largest singular values of product matrices.
    RmtCondition(Common),
    /// Minibatch gradient noise against its bound on a least-squares model.
    NoiseBound(Common),
    /// Per-layer activation moments at initialization.
    InitMoments(Common),
    /// Sign coherence of conv kernel gradients at initialization.
    Coherence(Common),
    /// Per-class logit gradients on the diagnostics batch at initialization.
    ClassHeatmap(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command) -> Result<Vec<PathBuf>, Error> {
    type Job = fn(&ExperimentConfig, &Path) -> bnscope::Result<Vec<PathBuf>>;
    let (common, job): (Common, Job) = match command {
        Command::Train(c) => (c, commands::train),
        Command::ProbeLoss(c) => (c, commands::probe_loss),
        Command::RmtDensity(c) => (c, commands::rmt_density),
        Command::RmtSpectrum(c) => (c, commands::rmt_spectrum),
        Command::RmtCondition(c) => (c, commands::rmt_condition),
        Command::NoiseBound(c) => (c, commands::noise_bound),
        Command::InitMoments(c) => (c, commands::init_moments),
        Command::Coherence(c) => (c, commands::coherence),
        Command::ClassHeatmap(c) => (c, commands::class_heatmap),
    };
    let cfg = load(&common)?;
    let out = common
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("bnscope-out"));
    job(&cfg, &out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bnscope: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Parse { .. } => 1,
                _ => 2,
            })
        }
    }
}
