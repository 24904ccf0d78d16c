use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jumpmfg::equilibrium::Backend;
use jumpmfg_cli::{load_scenario, run, Command, Overrides, RunError};

#[derive(Parser)]
#[command(name = "jumpmfg", version, about = "Mean-field portfolio games with jump common noise")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate the noise only (Brownian paths and jump counts).
    Simulate(Common),
    /// Solve the single-agent problem per type class.
    SolveSingle(Common),
    /// Solve the mean-field equilibrium and check the fixed point.
    SolveMfg(Common),
    /// Run the scenario's invariant suites.
    Verify(Common),
    /// Compare the lattice solver with brute-force dynamic programming.
    Oracle(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Lattice,
    Lsmc,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of common-noise paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Agents per common path.
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::SolveSingle(a) => (Command::SolveSingle, a),
        Sub::SolveMfg(a) => (Command::SolveMfg, a),
        Sub::Verify(a) => (Command::Verify, a),
        Sub::Oracle(a) => (Command::Oracle, a),
    };
    let overrides = Overrides {
        seed: args.seed,
        paths: args.paths,
        agents: args.agents,
        backend: args.backend.map(|b| match b {
            BackendArg::Lattice => Backend::Lattice,
            BackendArg::Lsmc => Backend::Lsmc,
        }),
    };
    let result = load_scenario(&args.scenario)
        .map_err(RunError::from)
        .and_then(|sc| jumpmfg_cli::run::apply_overrides(&sc, &overrides))
        .and_then(|sc| run(&sc, cmd, &args.out));
    match result {
        Ok(art) => {
            print!("{}", art.summary);
            if art.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
