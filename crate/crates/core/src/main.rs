use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use transport_count::oracle::DEFAULT_BUDGET;
use transport_count::polytope::Mode;
use transport_count::report::{run, write_report, RunConfig, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliMode {
    Integer,
    Binary,
}

impl From<CliMode> for Mode {
    fn from(mode: CliMode) -> Mode {
        match mode {
            CliMode::Integer => Mode::Integer,
            CliMode::Binary => Mode::Binary,
        }
    }
}

/// Estimate and exactly count integer or binary points of multi-index
/// transportation polytopes, with spectral diagnostics.
#[derive(Parser, Debug)]
#[command(name = "transport-count", version)]
struct Cli {
    /// Counting mode
    #[arg(long, value_enum)]
    mode: CliMode,

    /// Input spec document: {"nu": int, "dims": [...], "margins": [[...], ...]}
    #[arg(long)]
    input: PathBuf,

    /// Solver tolerance on the margin residual
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,

    /// Run the exact enumeration oracle
    #[arg(long)]
    exact: bool,

    /// Check the counting integral at N grid points per axis
    /// (power of two in [16, 512])
    #[arg(long, value_name = "N")]
    verify_integral: Option<usize>,

    /// Run the spectral and probabilistic diagnostics suite
    #[arg(long)]
    diagnostics: bool,

    /// Seed for the Monte Carlo cross-checks
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Node budget for the exact oracle
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,

    /// Report destination; stdout when omitted
    #[arg(long)]
    output: Option<PathBuf>,

    /// Include wall-clock timings in the report (not byte-reproducible)
    #[arg(long)]
    timings: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = RunConfig {
        mode: cli.mode.into(),
        input: cli.input,
        tol: cli.tol,
        exact: cli.exact,
        verify_integral: cli.verify_integral,
        diagnostics: cli.diagnostics,
        seed: cli.seed,
        budget: cli.budget,
        output: cli.output,
        timings: cli.timings,
    };
    let outcome = run(&config);
    if let Err(e) = write_report(&config, &outcome) {
        eprintln!("failed to write report: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(outcome.exit_code as u8)
}
