mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "oscarray", version, about = "Coupled-oscillator array steady-state and stability analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Element model used by the array solver.
    #[arg(long, global = true, value_enum, default_value_t = ModelKind::Pw)]
    model: ModelKind,
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory, overriding `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Pw,
    Nonpw,
    Exact,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pw => "pw",
            Self::Nonpw => "nonpw",
            Self::Exact => "exact",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sample-table CSV per oscillator.
    Extract,
    /// One synchronized solution at [solve].dphi_rad.
    Solve,
    /// Phase-shift continuation over the [sweep] range.
    Sweep,
    /// Pole trace and stable intervals over the [sweep] range.
    Stability,
    /// Source-phase sweep with an injected signal ([injection]).
    InjectSweep,
    /// PW and non-PW sweeps against the exact solver; exit 2 past the [validate] tolerances.
    Validate,
}

pub enum CliError {
    Config(String),
    Numeric(String),
    Threshold(String),
}

impl From<oscarray::OscError> for CliError {
    fn from(e: oscarray::OscError) -> Self {
        match e {
            oscarray::OscError::Io(m) => CliError::Config(m),
            e => CliError::Numeric(e.to_string()),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut cfg = config::RunConfig::load(&path).map_err(CliError::Config)?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    commands::check_sections(cli.command, cli.model, &cfg).map_err(CliError::Config)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| commands::execute(cli.command, cli.model, &cfg))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let ok = matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion);
            return ExitCode::from(if ok { 0 } else { 1 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Numeric(m)) => {
            eprintln!("numeric failure: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Threshold(m)) => {
            eprintln!("validation failed: {m}");
            ExitCode::from(2)
        }
    }
}
