mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Physics-guided lake temperature modelling: synthetic drivers, a
/// heat-budget simulator, and LSTM training with an energy-conservation
/// penalty.
#[derive(Debug, Parser)]
#[command(name = "thermocline", version, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// `key = value` settings file. Without it, `<command>.cfg` in
    /// $THERMOCLINE_CONFIG_DIR is used when present. Flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Extra `key=value` override, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate seeded synthetic daily meteorology.
    SynthDrivers(commands::SynthDriversArgs),
    /// Write the hypsography of an idealized lake shape.
    MakeGeometry(commands::MakeGeometryArgs),
    /// Run the heat-budget simulator; writes the field and its energy budget.
    Simulate(commands::SimulateArgs),
    /// Sample sparse profile observations from a temperature field.
    SampleObs(commands::SampleObsArgs),
    /// Train a model from random weights on observations.
    Train(commands::TrainArgs),
    /// Train a model on every cell of a simulated field.
    Pretrain(commands::PretrainArgs),
    /// Continue training a checkpoint on observations.
    Finetune(commands::FinetuneArgs),
    /// Score a checkpoint against observations.
    Evaluate(commands::EvaluateArgs),
    /// Per-day energy-balance residuals of a temperature field.
    EnergyAudit(commands::EnergyAuditArgs),
    /// Run the twin-lake benchmark grid.
    Experiment(commands::ExperimentArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthDrivers(_) => "synth-drivers",
            Command::MakeGeometry(_) => "make-geometry",
            Command::Simulate(_) => "simulate",
            Command::SampleObs(_) => "sample-obs",
            Command::Train(_) => "train",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::Evaluate(_) => "evaluate",
            Command::EnergyAudit(_) => "energy-audit",
            Command::Experiment(_) => "experiment",
        }
    }
}

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    use thermocline::Error;
    if err.downcast_ref::<settings::UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => EXIT_USAGE,
        Some(Error::NonFinite(_) | Error::UnstableDiffusion { .. } | Error::ClosureViolated { .. }) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
