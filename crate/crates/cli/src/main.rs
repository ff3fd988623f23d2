use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rpdp_core::experiment::{self, ExperimentOutcome, ExperimentSpec, Mode};
use rpdp_core::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Discrete-event simulator for residual-performance data placement on a
/// Kademlia storage overlay.
#[derive(Parser)]
#[command(name = "rpdp-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured placement method once per seed.
    Run(Common),
    /// Paired baseline and RPDP runs on every seed.
    Compare(Common),
    /// Paired runs at every node count in `experiment.sweepNodeCounts`.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment spec with `key = value` lines.
    spec: PathBuf,
    /// Run only this seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Output directory; replaces `experiment.outputDir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress the summary table.
    #[arg(long)]
    quiet: bool,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load(mode: Mode, args: &Common) -> Result<ExperimentSpec, Failure> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", args.spec.display())))?;
    let mut spec = ExperimentSpec::parse_unvalidated(&text)?;
    spec.mode = mode;
    if let Some(seed) = args.seed_override {
        spec.override_seed(seed);
    }
    if let Some(out) = &args.out {
        spec.output_dir = out.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn print_summary(outcome: &ExperimentOutcome) -> Result<(), Failure> {
    let spec = &outcome.spec;
    println!("experiment {} ({})", spec.name, spec.mode.as_str());
    if spec.mode == Mode::Single {
        println!(
            "{:>6} {:>9} {:>6} {:>12} {:>12} {:>10}",
            "seed", "method", "nodes", "latency_ms", "stddev_ms", "hops"
        );
        for run in &outcome.runs {
            let s = experiment::summarize(&run.captures)?;
            println!(
                "{:>6} {:>9} {:>6} {:>12.3} {:>12.3} {:>10.3}",
                run.config.seed,
                run.config.method.as_str(),
                run.config.node_count,
                s.overall_latency_ms,
                s.stddev_ms,
                run.summary.mean_lookup_hops
            );
        }
        return Ok(());
    }
    println!(
        "{:>6} {:>6} {:>13} {:>13} {:>9} {:>12} {:>12}",
        "nodes", "seed", "baseline_ms", "rpdp_ms", "improve%", "base_sd_ms", "rpdp_sd_ms"
    );
    for nodes in outcome.node_counts() {
        let Some(cmp) = outcome.comparison(nodes)? else {
            continue;
        };
        for row in cmp.per_seed.iter() {
            print_row(row, &row.seed.to_string());
        }
        print_row(&cmp.aggregate, "mean");
    }
    Ok(())
}

fn print_row(row: &experiment::ComparisonRow, label: &str) {
    println!(
        "{:>6} {:>6} {:>13.3} {:>13.3} {:>9.2} {:>12.3} {:>12.3}",
        row.nodes,
        label,
        row.baseline_latency_ms,
        row.rpdp_latency_ms,
        row.improvement_pct,
        row.baseline_stddev_ms,
        row.rpdp_stddev_ms
    );
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let (mode, args) = match &cli.command {
        Command::Run(a) => (Mode::Single, a),
        Command::Compare(a) => (Mode::Compare, a),
        Command::Sweep(a) => (Mode::Sweep, a),
    };
    let spec = load(mode, args)?;
    let outcome = experiment::execute(&spec)?;
    let written = experiment::write_outputs(&outcome, &spec.output_dir)
        .map_err(|e| Failure::Runtime(format!("writing {}: {e}", spec.output_dir.display())))?;
    if !args.quiet {
        print_summary(&outcome)?;
        println!(
            "wrote {} files to {}",
            written.len(),
            spec.output_dir.display()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
