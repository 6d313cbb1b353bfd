//! `imc`: estimate, test, simulate and diagnose indexed Markov chain models of
//! discretized returns.

mod artifacts;
mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};

use config::{AcfArgs, ConfigFile, DataArgs, FptArgs, GridArgs, IngestArgs, SelectArgs, SimulateArgs, TestArgs};
use error::CliError;

#[derive(Parser)]
#[command(name = "imc", version, about = "Indexed Markov chain models of high-frequency returns")]
struct Cli {
    /// TOML file of settings; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for bootstrap and Monte Carlo [default: all cores].
    #[arg(long, global = true, env = "IMC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resample ticks, take log returns and discretize them.
    Ingest {
        #[command(flatten)]
        args: IngestArgs,
        /// Output directory [default: .].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate change points and regime matrices.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        select: SelectArgs,
        /// Output directory [default: .].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bootstrap test of the fitted change points against a single matrix.
    Test {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        select: SelectArgs,
        #[command(flatten)]
        test: TestArgs,
        /// Output directory [default: .].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a trajectory from a fitted model.
    Simulate {
        #[command(flatten)]
        args: SimulateArgs,
        /// Output directory [default: .].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// First-passage distribution of the index into a regime.
    Fpt {
        #[command(flatten)]
        args: FptArgs,
        /// Output directory [default: .].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Autocorrelation of squared returns.
    Acf {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        acf: AcfArgs,
        /// Output directory [default: .].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// %RSMD and %MAD between matrices stored in two JSON files.
    Matdist {
        /// Matrix, list of matrices, or model JSON.
        first: PathBuf,
        /// Reference with the same number of matrices.
        reference: PathBuf,
        /// Also save the result here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit, test and diagnose in one run.
    Report {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        select: SelectArgs,
        #[command(flatten)]
        test: TestArgs,
        /// Output directory [default: .].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> commands::Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input(anyhow!("--threads must be positive")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(anyhow!("cannot start thread pool: {e}")))?;
    }
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { args, out } => commands::ingest(cfg.resolve(args)?, cfg.out(out)?),
        Command::Fit { data, grid, select, out } => {
            commands::fit(cfg.resolve(data)?, cfg.resolve(grid)?, cfg.resolve(select)?, cfg.out(out)?)
        }
        Command::Test { data, grid, select, test, out } => commands::test(
            cfg.resolve(data)?,
            cfg.resolve(grid)?,
            cfg.resolve(select)?,
            cfg.resolve(test)?,
            cfg.out(out)?,
        ),
        Command::Simulate { args, out } => commands::simulate(cfg.resolve(args)?, cfg.out(out)?),
        Command::Fpt { args, out } => commands::fpt(cfg.resolve(args)?, cfg.out(out)?),
        Command::Acf { data, acf, out } => commands::acf(cfg.resolve(data)?, cfg.resolve(acf)?, cfg.out(out)?),
        Command::Matdist { first, reference, out } => commands::matdist(&first, &reference, cfg.out(out)?),
        Command::Report { data, grid, select, test, out } => report::report(
            cfg.resolve(data)?,
            cfg.resolve(grid)?,
            cfg.resolve(select)?,
            cfg.resolve(test)?,
            cfg.out(out)?,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error ({}): {}", e.kind(), e.message());
            e.exit_code()
        }
    }
}
