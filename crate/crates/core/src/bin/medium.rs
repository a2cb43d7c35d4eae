use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sync_medium::scenario::{self, RunError, RunOptions};

#[derive(Parser)]
#[command(name = "medium", about = "Run synchronization scenarios and compare their metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the per-tick metrics CSV.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Summary file; printed to stdout when omitted.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Network event trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Per-event display-time differences.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Compare two metrics CSVs (or two summaries): variant minus baseline.
    Compare {
        baseline: PathBuf,
        variant: PathBuf,
        #[arg(long, default_value_t = 5000)]
        window_ms: u64,
    },
}

const CONFIG_ERROR: u8 = 2;
const INVARIANT_VIOLATION: u8 = 3;

fn create(path: &PathBuf) -> Result<Box<dyn Write>, ExitCode> {
    File::create(path).map(|f| Box::new(BufWriter::new(f)) as Box<dyn Write>).map_err(|e| {
        eprintln!("error: cannot create {}: {e}", path.display());
        ExitCode::FAILURE
    })
}

fn run(
    path: PathBuf,
    seed: Option<u64>,
    out: PathBuf,
    summary: Option<PathBuf>,
    trace: Option<PathBuf>,
    events: Option<PathBuf>,
) -> Result<(), ExitCode> {
    let mut config = scenario::load_scenario(&path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(CONFIG_ERROR)
    })?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let options = RunOptions {
        metrics: Some(create(&out)?),
        events: events.as_ref().map(create).transpose()?,
        trace: trace.as_ref().map(create).transpose()?,
        keep_rows: false,
    };
    let report = scenario::run(&config, options).map_err(|e| {
        eprintln!("error: {e}");
        match e {
            RunError::Config(_) => ExitCode::from(CONFIG_ERROR),
            RunError::Invariant { .. } => ExitCode::from(INVARIANT_VIOLATION),
            RunError::Io(_) => ExitCode::FAILURE,
        }
    })?;
    match summary {
        Some(p) => {
            let mut w = create(&p)?;
            report.summary.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| {
                eprintln!("error: writing {}: {e}", p.display());
                ExitCode::FAILURE
            })
        }
        None => {
            print!("{}", report.summary);
            Ok(())
        }
    }
}

fn compare(baseline: PathBuf, variant: PathBuf, window_ms: u64) -> Result<(), ExitCode> {
    let read = |p: &PathBuf| {
        std::fs::read_to_string(p).map_err(|e| {
            eprintln!("error: cannot read {}: {e}", p.display());
            ExitCode::FAILURE
        })
    };
    let a = read(&baseline)?;
    let b = read(&variant)?;
    let cmp = scenario::compare(&a, &b, window_ms).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(CONFIG_ERROR)
    })?;
    print!("{cmp}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, out, summary, trace, events } => {
            run(scenario, seed, out, summary, trace, events)
        }
        Command::Compare { baseline, variant, window_ms } => compare(baseline, variant, window_ms),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
