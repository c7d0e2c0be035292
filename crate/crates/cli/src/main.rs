//! `dimmech`: scenario runner for dimensioned Hamiltonian mechanics.
//!
//! Subcommands:
//! - `run <scenario...>` — validate, certify, integrate and write CSV and
//!   report files; exit 0 iff every requested check passes and
//!   integrations complete (1 on failed checks, 2 on configuration
//!   errors).
//! - `check <scenario>` — certifications and dimensional validation only.
//! - `convert <value> <dim-expr> --scenario <file> --from A --to B` —
//!   re-reads a value between two of the scenario's unit systems.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod dimcheck;
mod runner;
mod scenario;

use runner::{run_scenario, RunError, RunOptions};
use scenario::load_scenario;

#[derive(Parser)]
#[command(
    name = "dimmech",
    version,
    about = "dimensioned Hamiltonian mechanics scenario runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios: certifications, dimensional validation, flows.
    Run(RunArgs),
    /// Certifications and validation only; no integration, no files.
    Check {
        scenario: PathBuf,
        /// Override the scenario's sampling seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert a dimensioned value between two unit systems declared in
    /// a scenario file.
    Convert {
        #[arg(allow_hyphen_values = true)]
        value: f64,
        /// Dimension expression over the scenario's base measurands.
        dim_expr: String,
        /// Scenario file declaring the measurand space and unit systems.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
}

#[derive(Args)]
struct RunArgs {
    scenarios: Vec<PathBuf>,
    /// Output directory for CSV and report files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Validate and certify without integrating.
    #[arg(long)]
    dry_run: bool,
    /// Run independent scenarios concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Override the scenario's sampling seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run_many(args),
        Command::Check { scenario, seed } => {
            let opts = RunOptions {
                out_dir: PathBuf::from("."),
                dry_run: true,
                seed_override: seed,
                write_outputs: false,
            };
            match execute(&scenario, &opts) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(1),
                Err(code) => code,
            }
        }
        Command::Convert {
            value,
            dim_expr,
            scenario,
            from,
            to,
        } => convert_cmd(value, &dim_expr, &scenario, &from, &to),
    }
}

fn run_many(args: RunArgs) -> ExitCode {
    if args.scenarios.is_empty() {
        eprintln!("error: no scenario files given");
        return ExitCode::from(2);
    }
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return ExitCode::from(2);
    }
    let opts = RunOptions {
        out_dir: args.out.clone(),
        dry_run: args.dry_run,
        seed_override: args.seed,
        write_outputs: true,
    };
    let jobs = args.jobs.max(1);
    let mut worst = ExitCode::SUCCESS;
    let mut worst_rank = 0u8;
    if jobs == 1 {
        for path in &args.scenarios {
            rank_outcome(execute(path, &opts), &mut worst, &mut worst_rank);
        }
    } else {
        // independent scenarios on a bounded pool; outputs stay per-file
        // deterministic regardless of scheduling
        let results = std::sync::Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for chunk in args.scenarios.chunks(args.scenarios.len().div_ceil(jobs)) {
                let opts = &opts;
                let results = &results;
                scope.spawn(move || {
                    for path in chunk {
                        let r = execute(path, opts);
                        results.lock().unwrap().push(r);
                    }
                });
            }
        });
        for r in results.into_inner().unwrap() {
            rank_outcome(r, &mut worst, &mut worst_rank);
        }
    }
    worst
}

fn rank_outcome(r: Result<bool, ExitCode>, worst: &mut ExitCode, worst_rank: &mut u8) {
    let (code, rank) = match r {
        Ok(true) => (ExitCode::SUCCESS, 0),
        Ok(false) => (ExitCode::from(1), 1),
        Err(code) => (code, 2),
    };
    if rank > *worst_rank {
        *worst_rank = rank;
        *worst = code;
    }
}

/// Runs one scenario; `Ok(passed)` when execution completed, `Err(code)`
/// for configuration (2) or execution (1) failures.
fn execute(path: &Path, opts: &RunOptions) -> Result<bool, ExitCode> {
    let scenario = match load_scenario(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: error: {e}", path.display());
            return Err(ExitCode::from(2));
        }
    };
    match run_scenario(&scenario, path, opts) {
        Ok(outcome) => {
            print!("{}", outcome.report);
            if !outcome.all_passed {
                eprintln!("{}: checks failed", path.display());
            }
            Ok(outcome.all_passed)
        }
        Err(RunError::Config(msg)) => {
            eprintln!("{}: error: {msg}", path.display());
            Err(ExitCode::from(2))
        }
        Err(RunError::Execution(msg)) => {
            eprintln!("{}: error: {msg}", path.display());
            Err(ExitCode::from(1))
        }
    }
}

fn convert_cmd(
    value: f64,
    dim_expr: &str,
    scenario_path: &Path,
    from: &str,
    to: &str,
) -> ExitCode {
    use dimmech_core::measurand::{
        convert, parse_dimension, MeasurandSpace, TypedNumber, UnitSystem,
    };
    let scenario = match load_scenario(scenario_path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let space = match MeasurandSpace::new(scenario.space.base.clone()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let lookup = |name: &str| -> Option<UnitSystem> {
        scenario
            .units
            .get(name)
            .and_then(|u| UnitSystem::new(&space, u.scales.clone(), u.names.clone()).ok())
    };
    let (Some(from_sys), Some(to_sys)) = (lookup(from), lookup(to)) else {
        eprintln!("error: unit system `{from}` or `{to}` is not declared in the scenario");
        return ExitCode::from(2);
    };
    let dim = match parse_dimension(dim_expr, &space) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let number = match TypedNumber::new(value, dim) {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match convert(&number, &from_sys, &to_sys) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
