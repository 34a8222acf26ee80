use std::path::PathBuf;
use std::process::ExitCode;

use canon_bench::config::Task;
use canon_bench::dataset::{make_synthetic, SyntheticKind};
use canon_bench::run::{run, Overrides};
use canon_bench::BenchError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "canon-engine", version, about = "Test-time canonicalization engine and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: out/<task> next to the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Score candidates on their inscribed square.
    #[arg(long)]
    crop_disk: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Canonicalize images; writes canonical PNGs and JSON traces.
    Canon(RunArgs),
    /// C_n pose recovery and accuracy.
    BenchRotation(RunArgs),
    /// Illuminant sweep.
    BenchColor(RunArgs),
    /// Gamma sweep.
    BenchContrast(RunArgs),
    /// Optimizer on synthetic objectives.
    BenchBoSynthetic(RunArgs),
    /// Per-image energy terms.
    EnergyEval(RunArgs),
    /// Uprightness gate accuracy.
    GateEval(RunArgs),
    /// Write a synthetic PNG dataset with manifest and prompts.
    MakeSynthetic {
        /// upright or banded.
        #[arg(long, default_value = "upright")]
        kind: SyntheticKind,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_task(task: Task, args: RunArgs) -> Result<(), BenchError> {
    let overrides = Overrides {
        task: Some(task),
        out_dir: args.out,
        workers: args.workers,
        seed: args.seed,
        crop_disk: args.crop_disk,
    };
    let outcome = run(&args.config, &overrides)?;
    for w in &outcome.report.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", outcome.paths.report_json.display());
    println!("{}", outcome.paths.summary_csv.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Canon(a) => run_task(Task::Canon, a),
        Command::BenchRotation(a) => run_task(Task::BenchRotation, a),
        Command::BenchColor(a) => run_task(Task::BenchColor, a),
        Command::BenchContrast(a) => run_task(Task::BenchContrast, a),
        Command::BenchBoSynthetic(a) => run_task(Task::BenchBoSynthetic, a),
        Command::EnergyEval(a) => run_task(Task::EnergyEval, a),
        Command::GateEval(a) => run_task(Task::GateEval, a),
        Command::MakeSynthetic {
            kind,
            count,
            size,
            seed,
            out,
        } => make_synthetic(&out, kind, count, size, seed).map(|m| println!("{}", m.display())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
