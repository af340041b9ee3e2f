use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use harvest_cli::commands::{self, AdjointArgs, DynamicsArgs, FbsArgs, GradcheckArgs, Outcome, StationaryArgs, SweepArgs};
use harvest_cli::output::Output;
use harvest_cli::validate;
use harvest_cli::CliError;
use serde_json::json;

/// Age-structured harvesting: stationary profiles, dynamics, adjoints,
/// gradient checks and control sweeps.
#[derive(Parser, Debug)]
#[command(name = "harvest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stationary rate and effort profiles with unharvested baselines.
    Stationary(StationaryArgs),
    /// Time-dependent forward solve.
    Dynamics(DynamicsArgs),
    /// Stationary costate and switching structure.
    Adjoint(AdjointArgs),
    /// Stationary yield and depletion over a range of intensities.
    Sweep(SweepArgs),
    /// Adjoint gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Forward-backward sweep for the rate model.
    Fbs(FbsArgs),
    /// Runs the acceptance suite.
    Validate {
        /// Existing directory for the manifest.
        #[arg(long, env = "HARVEST_OUT_DIR", default_value = ".")]
        out: PathBuf,
        /// Restrict to these criteria (repeatable).
        #[arg(long = "criterion")]
        criteria: Vec<u32>,
    },
}

fn run_validate(out: &Path, criteria: &[u32]) -> Result<Outcome, CliError> {
    let output = Output::new(out, "validate")?;
    let results = validate::run(criteria);
    let passed = results.iter().all(|r| r.passed);
    let lines: Vec<String> = results.iter().map(ToString::to_string).collect();
    let diag = json!(results
        .iter()
        .map(|r| json!({ "criterion": r.id, "title": r.title, "passed": r.passed, "detail": r.detail, "seconds": r.seconds }))
        .collect::<Vec<_>>());
    let manifest = output.finish("acceptance suite".into(), None, Vec::new(), diag, passed)?;
    Ok(Outcome { manifest, lines })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Stationary(a) => commands::stationary(a),
        Command::Dynamics(a) => commands::dynamics(a),
        Command::Adjoint(a) => commands::adjoint(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Fbs(a) => commands::fbs(a),
        Command::Validate { out, criteria } => run_validate(out, criteria),
    };
    match result {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            println!("wrote {}", outcome.manifest.outputs.join(", "));
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("harvest: check failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("harvest: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
