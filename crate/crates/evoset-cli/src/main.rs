//! Command-line driver for the experiment harness: one subcommand per
//! task, a JSON config, optional seed and output-directory overrides.
//! Exit status is nonzero iff any invariant record fails.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use evoset::harness::{run, ExperimentConfig, Task};

#[derive(Parser)]
#[command(name = "evoset", version, about = "Evolving-set process laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed override; every random quantity flows from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.json and CSV artifacts; falls back to
    /// the config's `out_dir`, then to `evoset-out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the exact identity battery on a configured environment.
    #[command(name = "verify-identities")]
    VerifyIdentities(RunArgs),
    /// Check the one-step moment inequalities over fuzzed environments.
    #[command(name = "drift-suite")]
    DriftSuite(RunArgs),
    /// Simulate evolving-set trajectories (optionally coupled to a walk).
    #[command(name = "evolving-sim")]
    EvolvingSim(RunArgs),
    /// Compute the heat-kernel decay envelope over the horizon.
    #[command(name = "kernel-decay")]
    KernelDecay(RunArgs),
    /// Simulate the continuous-time walk by Poisson thinning.
    #[command(name = "csrw-sim")]
    CsrwSim(RunArgs),
    /// Percolation cluster return-count experiment.
    #[command(name = "percolation-transience")]
    PercolationTransience(RunArgs),
    /// Tabulate isoperimetric constants and growth functions.
    #[command(name = "kappa-table")]
    KappaTable(RunArgs),
}

impl Command {
    fn split(self) -> (Task, RunArgs) {
        match self {
            Command::VerifyIdentities(a) => (Task::VerifyIdentities, a),
            Command::DriftSuite(a) => (Task::DriftSuite, a),
            Command::EvolvingSim(a) => (Task::EvolvingSim, a),
            Command::KernelDecay(a) => (Task::KernelDecay, a),
            Command::CsrwSim(a) => (Task::CsrwSim, a),
            Command::PercolationTransience(a) => (Task::PercolationTransience, a),
            Command::KappaTable(a) => (Task::KappaTable, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, args) = cli.command.split();
    match execute(task, &args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(task: Task, args: &RunArgs) -> anyhow::Result<bool> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let mut cfg: ExperimentConfig = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("evoset-out"));
    let report = run(task, &cfg, &out)?;
    for r in &report.records {
        println!(
            "{} {} measured={} tolerance={} :: {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.anchor,
            r.measured,
            r.tolerance,
            r.note
        );
    }
    println!(
        "{}: {} records, {} ms, artifacts in {}",
        if report.passed { "ok" } else { "FAILED" },
        report.records.len(),
        report.timing_ms,
        out.display()
    );
    Ok(report.passed)
}
