use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparsim::config::{GridSpec, RunConfig};
use sparsim::experiment::verify::run_suites;
use sparsim::experiment::{run_config, run_grid, staleness_report, write_atomic};
use sparsim::Error;

#[derive(Parser)]
#[command(
    name = "sparsim",
    version,
    about = "Asynchronous sparsified SGD simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its records and summary.
    Simulate(RunArgs),
    /// Run every cell of a grid file for each seed.
    Grid(GridArgs),
    /// Run the built-in self-checks.
    Verify(VerifyArgs),
    /// Histogram of staleness from the timing model alone.
    StalenessHist(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output location. Without it, CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; repeat r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite name, or `all`.
    #[arg(default_value = "all")]
    suite: String,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(Error),
    Runtime(Error),
    ChecksFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidArgument(_) => Failure::Usage(e),
            other => Failure::Runtime(other),
        }
    }
}

fn load_run(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&args.config).map_err(|e| match e {
        Error::Io { .. } => Failure::Usage(e),
        other => Failure::from(other),
    })?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| {
                    Failure::Runtime(Error::Io {
                        path: dir.to_path_buf(),
                        source: e,
                    })
                })?;
            }
            Ok(write_atomic(path, bytes)?)
        }
        None => std::io::stdout().write_all(bytes).map_err(|e| {
            Failure::Runtime(Error::Io {
                path: "<stdout>".into(),
                source: e,
            })
        }),
    }
}

fn simulate(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_run(args)?;
    let output = run_config(&cfg)?;
    let s = &output.summary;
    match args.out.as_deref().or(cfg.output.as_deref()) {
        Some(dir) => {
            output.write_to(dir)?;
            eprintln!("wrote {}", dir.display());
        }
        None => emit(None, output.csv()?.as_bytes())?,
    }
    eprintln!(
        "{}: {} updates, loss {:.6}, avg staleness {:.3}{}",
        s.run_id,
        s.updates,
        s.final_train_loss,
        s.avg_staleness,
        s.test_accuracy
            .map(|a| format!(", accuracy {:.2}%", 100.0 * a))
            .unwrap_or_default(),
    );
    Ok(())
}

fn grid(args: &GridArgs) -> Result<(), Failure> {
    let spec = GridSpec::load(&args.config).map_err(|e| match e {
        Error::Io { .. } => Failure::Usage(e),
        other => Failure::from(other),
    })?;
    if args.jobs == 0 {
        return Err(Failure::Usage(Error::Config {
            key: "--jobs".into(),
            message: "must be at least 1".into(),
        }));
    }
    let report = run_grid(&spec, args.jobs, args.seed, args.out.as_deref())?;
    match &args.out {
        Some(dir) => eprintln!("wrote {}", dir.display()),
        None => emit(None, report.to_csv().as_bytes())?,
    }
    for b in &report.best_lr {
        eprintln!("best lr for {}: {}", b.variant, b.lr);
    }
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let reports = run_suites(&args.suite)?;
    for r in &reports {
        eprintln!("{} {}", if r.passed { "PASS" } else { "FAIL" }, r.suite);
        for c in r.checks.iter().filter(|c| !c.passed) {
            eprintln!("  {}: {}", c.name, c.detail);
        }
    }
    let text = serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n";
    emit(args.out.as_deref(), text.as_bytes())?;
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::ChecksFailed)
    }
}

fn staleness_hist(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_run(args)?;
    let report = staleness_report(&cfg)?;
    emit(args.out.as_deref(), report.to_csv().as_bytes())?;
    eprintln!(
        "{} workers, σ² = {}: mean staleness {:.3}, max {}",
        report.workers, report.delay_variance, report.avg_staleness, report.max_staleness
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Grid(a) => grid(a),
        Command::Verify(a) => verify(a),
        Command::StalenessHist(a) => staleness_hist(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::ChecksFailed) => ExitCode::from(1),
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
