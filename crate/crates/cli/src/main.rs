use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod args;
mod external;
mod restore;
mod tools;

/// Residual diffusion sampling for image restoration.
#[derive(Debug, Parser)]
#[command(name = "dgsolver", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Restore a degraded image.
    Restore(restore::RestoreArgs),
    /// Measure convergence orders against a dense reference solve.
    Study(tools::StudyArgs),
    /// Tabulate the Jensen-gap bound.
    Jensen(tools::JensenArgs),
    /// Print schedule coefficients and rates on the solver grid.
    Schedule(tools::ScheduleCmdArgs),
    /// Run the conformance fixtures against an external predictor.
    CheckPredictor(external::CheckArgs),
    /// Host a built-in predictor over the wire protocol.
    Serve(external::ServeArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Restore(a) => restore::run(a),
        Command::Study(a) => tools::study(a),
        Command::Jensen(a) => tools::jensen(a),
        Command::Schedule(a) => tools::schedule(a),
        Command::CheckPredictor(a) => match external::check(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
        Command::Serve(a) => external::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
