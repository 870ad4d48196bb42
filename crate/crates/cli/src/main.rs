use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use himac::error::{Error, Result};
use himac::harness::{self, ExperimentConfig};
use himac::optimize::Method;

/// Overrides the worker thread count.
const THREADS_VAR: &str = "HIMAC_THREADS";

#[derive(Parser)]
#[command(name = "himac", version, about = "Hierarchical macro/micro policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method over several seeds and write per-run CSVs and a summary.
    Train {
        /// JSON or TOML experiment config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's method (himac, flat_grpo, rloo, simultaneous, fixed_budget, random_blueprint).
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides num_runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Overrides hyper.iterations.
        #[arg(long)]
        iterations: Option<usize>,
        /// Run seeds concurrently.
        #[arg(long)]
        parallel_runs: bool,
        /// Write every sampled trajectory as JSON lines.
        #[arg(long)]
        dump_trajectories: bool,
    },
    /// Tabulate final success, score and iterations-to-target per method.
    Compare {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Held-out learning curves of one experiment as CSV.
    ExportCurves {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train {
            config,
            method,
            out,
            runs,
            iterations,
            parallel_runs,
            dump_trajectories,
        } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::default(),
            };
            if let Some(m) = method {
                cfg.method = m.parse::<Method>()?;
            }
            if let Some(n) = runs {
                cfg.num_runs = n;
            }
            if let Some(t) = iterations {
                cfg.hyper.iterations = t;
            }
            cfg.parallel_runs |= parallel_runs;
            let reports = harness::run_experiment(&cfg, Some(&out), dump_trajectories)?;
            let table = harness::compare(&[(cfg.method.name().to_string(), reports)]);
            print!("{}", table.render_text());
        }
        Command::Compare { inputs, csv } => {
            let groups = harness::load_groups(&inputs)?;
            let table = harness::compare(&groups);
            print!("{}", table.render_text());
            if let Some(path) = csv {
                table.write_csv(fs::File::create(path)?)?;
            }
        }
        Command::ExportCurves { input, out } => {
            let summary = harness::load_summary(&input)?;
            match out {
                Some(path) => harness::export_curves(&summary.reports, fs::File::create(path)?)?,
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    harness::export_curves(&summary.reports, &mut lock)?;
                    lock.flush()?;
                }
            }
        }
    }
    Ok(())
}

fn fail(kind: &str, message: String) -> ExitCode {
    let body = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{body}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string().trim_end().to_string()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
