//! Command line front end: parse a config file, apply flag overrides, and
//! hand the resolved experiment to the runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kslab::config::{load_config, validate_mode, Mode, Overrides};
use kslab::runner;

#[derive(Parser)]
#[command(
    name = "kslab",
    version,
    about = "Numerical laboratory for a chemotaxis system on narrow planar domains"
)]
struct Cli {
    /// Experiment description file
    #[arg(long, short = 'c')]
    config: PathBuf,

    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Grid resolution, cells per unit length (overrides the config)
    #[arg(long)]
    resolution: Option<u32>,

    /// Seed for the perturbation generator (overrides the config)
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for sweep runs
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    /// Mode to run; defaults to the mode named in the config
    #[command(subcommand)]
    mode: Option<ModeCmd>,
}

#[derive(Subcommand, Clone, Copy)]
enum ModeCmd {
    /// Solve the steady profile for the configured mass
    Steady,
    /// Steady profile plus its first linearized eigenvalue
    Spectrum,
    /// Integrate the density trajectory and record monitors
    Evolve,
    /// Report the explicit mass thresholds for the configured ellipse
    Thresholds,
    /// Fan one config out over a list of parameter values
    Sweep,
    /// Orlicz-space sizes of the seeded perturbation
    Norms,
}

impl ModeCmd {
    fn mode(self) -> Mode {
        match self {
            ModeCmd::Steady => Mode::Steady,
            ModeCmd::Spectrum => Mode::Spectrum,
            ModeCmd::Evolve => Mode::Evolve,
            ModeCmd::Thresholds => Mode::Thresholds,
            ModeCmd::Sweep => Mode::Sweep,
            ModeCmd::Norms => Mode::Norms,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> kslab::Result<()> {
    let mut config = load_config(&cli.config)?;
    config.apply(&Overrides {
        mode: cli.mode.map(ModeCmd::mode),
        out: cli.out,
        resolution: cli.resolution,
        seed: cli.seed,
    });
    validate_mode(&config)?;
    runner::run(&config, cli.jobs)
}
