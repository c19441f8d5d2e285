use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use utmost_cli::commands::{self, Perturbation};
use utmost_cli::{CliError, CliResult};
use utmost_core::Criterion;

#[derive(Parser)]
#[command(name = "utmost", version, about = "Sensor orientation design and localization simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize sensor orientations for one configuration.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Check the solver against the closed-form TOA optimum.
    #[command(allow_negative_numbers = true)]
    Sanity {
        /// Tolerance on the A and D cells.
        #[arg(long)]
        tol_a: Option<f64>,
        /// Tolerance on the E cells.
        #[arg(long)]
        tol_e: Option<f64>,
        /// `m:criterion:delta`, shifts one reference value.
        #[arg(long, hide = true)]
        perturb: Option<String>,
    },
    /// Monte Carlo comparison of placements.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_trial: Option<PathBuf>,
    },
}

fn parse_perturbation(s: &str) -> CliResult<Perturbation> {
    let bad = || CliError::field("perturb", format!("expected m:criterion:delta, got {s}"));
    let parts: Vec<&str> = s.split(':').collect();
    let [m, c, d] = parts[..] else { return Err(bad()) };
    let criterion = match c {
        "A" => Criterion::A,
        "D" => Criterion::D,
        "E" => Criterion::E,
        _ => return Err(bad()),
    };
    Ok(Perturbation {
        m: m.parse().map_err(|_| bad())?,
        criterion,
        delta: d.parse().map_err(|_| bad())?,
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Solve { config, out, trace } => commands::run_solve(&config, &out, &trace).map(drop),
        Command::Sanity { tol_a, tol_e, perturb } => {
            let tol = commands::sanity_tolerances(tol_a, tol_e)?;
            let perturb = perturb.as_deref().map(parse_perturbation).transpose()?;
            commands::run_sanity(&tol, perturb, &mut std::io::stdout().lock())
        }
        Command::Simulate { config, out, per_trial } => commands::run_simulate(&config, &out, per_trial.as_deref()).map(drop),
    }
}

fn main() -> ExitCode {
    // usage errors share the validation exit code; clap would use 2
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
