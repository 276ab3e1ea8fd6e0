//! `offload`: policies, baselines, and simulations for rate-limited
//! offloading of classification work to a stronger remote model.
//!
//! Exit codes: 0 on success, 1 on input or configuration errors, 2 when the
//! policy solver fails to converge.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use offload_core::Error;

use crate::config::{Overrides, Settings};

#[derive(Debug, Parser)]
#[command(name = "offload", version, about = "Offload-policy experiments under token-bucket rate control")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Synthesize a dataset CSV at the configured dataset path.
    Gen(Overrides),
    /// Validate a dataset file and print summary statistics.
    IngestCheck(Overrides),
    /// Fit the entropy-to-reward metric map and save it as JSON.
    FitMetric(Overrides),
    /// Solve threshold policies for every configured (r, b) pair.
    Solve(Overrides),
    /// Simulate the solved policy and the fixed-threshold baseline for one (r, b).
    Simulate(Overrides),
    /// Simulate a device fleet under one multiplexing strategy.
    MultiSim(Overrides),
    /// Sweep per-device (rate, depth) splits for the hierarchical strategy.
    GridSearch(Overrides),
    /// Cross-validated evaluation over the full bucket grid.
    Eval(Overrides),
    /// Remove one metric tail of the dataset and save the remainder.
    Perturb(Overrides),
}

fn run(cmd: &Cmd) -> offload_core::Result<()> {
    let ov = match cmd {
        Cmd::Gen(ov)
        | Cmd::IngestCheck(ov)
        | Cmd::FitMetric(ov)
        | Cmd::Solve(ov)
        | Cmd::Simulate(ov)
        | Cmd::MultiSim(ov)
        | Cmd::GridSearch(ov)
        | Cmd::Eval(ov)
        | Cmd::Perturb(ov) => ov,
    };
    let settings = Settings::resolve(ov)?;
    match cmd {
        Cmd::Gen(_) => commands::gen(&settings),
        Cmd::IngestCheck(_) => commands::ingest_check(&settings),
        Cmd::FitMetric(_) => commands::fit_metric(&settings),
        Cmd::Solve(_) => commands::solve(&settings),
        Cmd::Simulate(_) => commands::simulate_cmd(&settings),
        Cmd::MultiSim(_) => commands::multi_sim(&settings),
        Cmd::GridSearch(_) => commands::grid_search(&settings),
        Cmd::Eval(_) => commands::eval(&settings),
        Cmd::Perturb(_) => commands::perturb(&settings),
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonConvergence { .. } => 2,
        _ => 1,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; anything else is a
            // malformed invocation, which is an input error here (clap's
            // default exit code of 2 is reserved for non-convergence).
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(&cli.cmd) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
