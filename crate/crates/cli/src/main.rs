//! `regime-mm`: solve, simulate and compare market-making policies under a
//! hidden liquidity regime.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 numerical
//! failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "regime-mm", version, about = "Market making with a hidden liquidity regime")]
struct Cli {
    /// Base output directory; runs land in `<out>/<command>/<manifest-hash>/`.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the full-information system on the whole inventory grid.
    SolveFull {
        config: PathBuf,
        #[command(flatten)]
        full: FullArgs,
    },
    /// Solve the two-regime partial-information equation.
    SolvePartial {
        config: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Monte Carlo P&L of a policy, plus a few recorded sample paths.
    Simulate {
        config: PathBuf,
        /// `partial`, `full` (quotes with the true regime) or `fixed:<spread>`.
        #[arg(long, value_parser = commands::parse_policy)]
        policy: commands::PolicyArg,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Previously written surface CSV; solved on the fly when absent.
        #[arg(long)]
        surface: Option<PathBuf>,
        /// Number of leading paths written as CSV.
        #[arg(long, default_value_t = 4)]
        record: usize,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        full: FullArgs,
    },
    /// Stable point of the filter when both sides quote the terminal spread.
    Attractor {
        config: PathBuf,
        /// Number of quoting sides, 1 or 2.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..=2))]
        beta: u32,
    },
    /// Aligned full- and partial-information spread series.
    Compare {
        config: PathBuf,
        /// Sample times on `[0, T]`.
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        full: FullArgs,
    },
}

#[derive(Args, Clone, Debug)]
struct GridArgs {
    /// Belief-grid intervals.
    #[arg(long, default_value_t = 200)]
    mpi: usize,
    /// Stored time steps, or `auto`.
    #[arg(long, default_value = "auto", value_parser = commands::parse_mt)]
    mt: commands::StoredSteps,
    /// Multiplier on the belief-gradient terms; 1 is the consistent equation.
    #[arg(long, default_value_t = 1.0)]
    gradient_scale: f64,
}

#[derive(Args, Clone, Debug)]
struct FullArgs {
    /// RK4 steps for the full-information system.
    #[arg(long, default_value_t = regime_mm::hjb_full::DEFAULT_STEPS)]
    steps: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SolveFull { config, full } => commands::solve_full(&config, full.steps, &cli.out),
        Command::SolvePartial { config, grid } => commands::solve_partial(&config, &grid.into(), &cli.out),
        Command::Simulate { config, policy, paths, seed, surface, record, grid, full } => commands::simulate(
            &config,
            &commands::SimulateArgs { policy, paths, seed, surface, record, grid: grid.into(), steps: full.steps },
            &cli.out,
        ),
        Command::Attractor { config, beta } => commands::attractor(&config, beta),
        Command::Compare { config, points, grid, full } => {
            commands::compare(&config, points, &grid.into(), full.steps, &cli.out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl From<GridArgs> for commands::Grid {
    fn from(g: GridArgs) -> Self {
        commands::Grid { m_pi: g.mpi, m_t: g.mt.0, gradient_scale: g.gradient_scale }
    }
}
