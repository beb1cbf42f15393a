//! `sfpca`: cleaning, description, FPCA fitting and forecasting, mixed
//! models, residual updates, simulation and reporting over visit-level CSV
//! files.

mod commands;
mod config;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "sfpca", version, about = "Sparse longitudinal FPCA and mixed-model pipeline")]
struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `seed` in the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); overrides `threads`.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Prints the resolved configuration as TOML and exits.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Applies the cleaning rules and writes the patient-flow provenance.
    Clean,
    /// Baseline means, variances and correlations.
    Describe,
    /// Selects (L, M), fits each outcome and exports curves.
    FpcaFit,
    /// Leave-last-out forecasts and their evaluation.
    FpcaForecast,
    /// Mixed models per outcome and biomarker: estimates, LRT and CV MSE.
    Lmm,
    /// Regresses forecast residuals on each biomarker.
    ResidualUpdate,
    /// Draws a synthetic cohort and its truth sidecar.
    Simulate,
    /// Collates earlier artifacts into summary tables.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Clean => "clean",
            Command::Describe => "describe",
            Command::FpcaFit => "fpca-fit",
            Command::FpcaForecast => "fpca-forecast",
            Command::Lmm => "lmm",
            Command::ResidualUpdate => "residual-update",
            Command::Simulate => "simulate",
            Command::Report => "report",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
    Output(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Output(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
            CliError::Output(_) => "output",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numerical(m) | CliError::Output(m) => m,
        }
    }

    /// Treats every non-numerical library error as a data error.
    pub fn data(e: sfpca::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }

    /// Prefixes the message with the item being processed.
    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{what}: {m}")),
            CliError::Output(m) => CliError::Output(format!("{what}: {m}")),
        }
    }
}

impl From<sfpca::Error> for CliError {
    fn from(e: sfpca::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else if e.is_data() {
            CliError::Data(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(t) = cli.threads {
        config.threads = t;
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = resolve(cli)?;
    if cli.print_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Config("no command given; see --help".into()));
    };
    if matches!(command, Command::Simulate) && config.seed.is_none() {
        return Err(CliError::Config("simulate needs a seed (`seed` or --seed)".into()));
    }
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    let mut ctx = run::Context::open(config, command.name())?;
    match command {
        Command::Clean => commands::clean(&mut ctx),
        Command::Describe => commands::describe(&mut ctx),
        Command::FpcaFit => commands::fpca_fit(&mut ctx),
        Command::FpcaForecast => commands::fpca_forecast(&mut ctx),
        Command::Lmm => commands::lmm(&mut ctx),
        Command::ResidualUpdate => commands::residual_update(&mut ctx),
        Command::Simulate => commands::simulate(&mut ctx),
        Command::Report => report::report(&mut ctx),
    }?;
    let dir = ctx.finish()?;
    println!("{}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({
                "error": {
                    "kind": e.kind(),
                    "code": e.code(),
                    "command": cli.command.map(Command::name),
                    "message": e.message(),
                }
            });
            eprintln!("{report}");
            ExitCode::from(e.code())
        }
    }
}
