use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bnpdro::harness::experiment::{cv_all, fit_all, load_source, replicate_data, run_experiment};
use bnpdro::harness::ingest_csv;
use bnpdro::harness::report::{emit_report, read_rows, spec_digest, summarize, ReportFormat};
use bnpdro::harness::spec::{Contamination, DataSource, ExperimentSpec, Selection};
use bnpdro::{DroError, ExecPolicy, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "bnpdro",
    version,
    about = "Smooth DP/HDP distributionally robust estimation experiments"
)]
struct Cli {
    /// Worker threads for replicate-level parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Master seed; overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated synthetic experiment.
    Simulate(RunArgs),
    /// Run a replicated experiment with contaminated training responses.
    Doro(RunArgs),
    /// Fit every method once on the spec's CSV data and write coefficients as JSON.
    Fit(RunArgs),
    /// Cross-validation scores of every grid point, as JSON.
    Cv {
        #[command(flatten)]
        run: RunArgs,
        /// Fold count; defaults to the spec's k-fold setting.
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Re-summarize a rows file written by `simulate` or `doro`.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
}

fn load(args: &RunArgs) -> Result<(ExperimentSpec, String, u64)> {
    let (spec, text) = ExperimentSpec::load(&args.spec)?;
    let seed = args.seed.unwrap_or(spec.seed);
    Ok((spec, spec_digest(&text), seed))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| DroError::io(path, e))?;
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

fn experiment(spec: &ExperimentSpec, digest: &str, seed: u64, args: &RunArgs, exec: ExecPolicy) -> Result<()> {
    let outcome = run_experiment(spec, seed, exec)?;
    if outcome.rows.is_empty() {
        let numerical = outcome.failures.iter().any(|f| f.numerical);
        let msg = outcome
            .failures
            .first()
            .map_or("no rows".to_string(), |f| f.message.clone());
        return Err(if numerical {
            DroError::Numerical(msg)
        } else {
            DroError::Empty(msg)
        });
    }
    emit_report(&outcome.rows, args.format.into(), &args.out, Some(digest))?;
    let total = spec.replications * spec.methods.len();
    log::info!(
        "{} of {total} fits reported, {} failed",
        outcome.rows.len(),
        outcome.failures.len()
    );
    for (method, stats) in summarize(&outcome.rows) {
        if let Some(s) = stats.get("testRisk") {
            eprintln!("{method}: testRisk mean {:.6} std {:.6}", s.mean, s.std.unwrap_or(0.0));
        }
    }
    Ok(())
}

/// Whole dataset of a spec: the CSV file, or the training pool of replicate 0.
fn whole_data(spec: &ExperimentSpec, seed: u64) -> Result<bnpdro::GroupedDataset> {
    match &spec.data {
        DataSource::Csv {
            path,
            response,
            group,
            standardize,
            intercept,
        } => {
            let data = ingest_csv(path, response, group.as_deref(), *standardize, spec.task.kind())?;
            Ok(if *intercept {
                bnpdro::harness::ingest::with_intercept(&data)
            } else {
                data
            })
        }
        _ => {
            let source = load_source(spec)?;
            Ok(replicate_data(spec, &source, seed, 0)?.train)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        ExecPolicy::Sequential
    } else {
        ExecPolicy::Parallel
    };
    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| DroError::invalid(e.to_string()))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cli.threads;
    match cli.command {
        Command::Simulate(args) => {
            let (spec, digest, seed) = load(&args)?;
            experiment(&spec, &digest, seed, &args, exec)
        }
        Command::Doro(args) => {
            let (mut spec, digest, seed) = load(&args)?;
            match &mut spec.data {
                DataSource::SparseLinear { contamination, .. } => {
                    contamination.get_or_insert(Contamination {
                        fraction: 0.05,
                        outlier_coefficient: -10.0,
                        sigma: None,
                    });
                }
                _ => return Err(DroError::Spec("doro needs a sparse_linear data source".into())),
            }
            experiment(&spec, &digest, seed, &args, exec)
        }
        Command::Fit(args) => {
            let (spec, _, seed) = load(&args)?;
            let data = whole_data(&spec, seed)?;
            let fitted = fit_all(&spec, &data, seed, exec)?;
            write_json(&fitted, &args.out)
        }
        Command::Cv { run, folds } => {
            let (spec, _, seed) = load(&run)?;
            let folds = match (folds, spec.selection) {
                (Some(k), _) => k,
                (None, Selection::KFold { folds, .. }) => folds,
                _ => return Err(DroError::Spec("give --folds or a kfold selection in the spec".into())),
            };
            let data = whole_data(&spec, seed)?;
            let scores = cv_all(&spec, &data, folds, seed, exec)?;
            write_json(&scores, &run.out)
        }
        Command::Report { input, out, format } => {
            let rows = read_rows(&input)?;
            emit_report(&rows, format.into(), &out, None)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
