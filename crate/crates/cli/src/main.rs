use std::process::ExitCode;

use clap::{Parser, Subcommand};
use popmaxent_cli::*;

#[derive(Parser)]
#[command(name = "popmaxent", version, about = "Maximum-entropy population distributions and growth dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a panel file and print a summary.
    IngestCheck(IngestArgs),
    /// Fit the rank distribution of one group and year.
    Fit(FitArgs),
    /// Gamma-scale q = 1 groups onto the master curve.
    Scale(ScaleArgs),
    /// Monte Carlo confidence band of the rank curve.
    Band(BandArgs),
    /// Fit binned growth dynamics.
    Dynamics(DynamicsArgs),
    /// Compare q from distributions with q from dynamics.
    CompareQ(CompareArgs),
    /// Simulate growth panels.
    Simulate(SimulateArgs),
}

/// Prints to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn run(cmd: &Command) -> CliResult<Outcome> {
    match cmd {
        Command::IngestCheck(a) => {
            let (summary, out) = run_ingest_check(a)?;
            say!("{}", serde_json::to_string_pretty(&summary).map_err(|e| CliError::Other(e.to_string()))?);
            Ok(out)
        }
        Command::Fit(a) => {
            let (doc, out) = run_fit(a)?;
            let p = &doc.params;
            say!("{}: q = {:.4}, ln Λ = {:.4}, ln x0 = {:.4}, σ = {:.4}, R = {:.5}", doc.method, p.q, p.log_lambda, p.log_x0, p.sigma, doc.r);
            Ok(out)
        }
        Command::Scale(a) => Ok(run_scale(a)?.1),
        Command::Band(a) => Ok(run_band(a)?.1),
        Command::Dynamics(a) => {
            let (doc, out) = run_dynamics(a)?;
            let f = &doc.fit;
            say!("k1 = {:.5}, kq = {:.5}, q = {:.4}, well defined = {}", f.k1, f.kq, f.q, f.well_defined);
            Ok(out)
        }
        Command::CompareQ(a) => {
            let (doc, out) = run_compare_q(a)?;
            for p in [&doc.summary.versus_maxent, &doc.summary.versus_reference].into_iter().flatten() {
                say!("q_dynamics vs {}: slope = {:.4}, R = {:.4} over {} groups", p.against, p.slope, p.r, p.n);
            }
            Ok(out)
        }
        Command::Simulate(a) => run_simulate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(out) => {
            for f in &out.files {
                eprintln!("wrote {}", f.display());
            }
            if out.status != Status::Ok {
                eprintln!("status: {:?}", out.status);
            }
            ExitCode::from(out.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
