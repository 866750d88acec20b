mod config;

use std::fs::{self, File, OpenOptions};
use std::io::{self as stdio, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, ValueEnum};
use log::{info, LevelFilter};
use warpsep::benchmark::{run_benchmark, separate, Algorithm};
use warpsep::io as bundle;
use warpsep::metrics::evaluate;
use warpsep::Exec;

use config::{ConfigError, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Synthesize,
    Separate,
    Evaluate,
    Benchmark,
}

/// Blind separation of time-varying mixtures of time-warped signals.
#[derive(Debug, Parser)]
#[command(name = "warpsep", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Separation algorithm: jefas-bss, sobi or p-sobi.
    #[arg(long, default_value = "jefas-bss")]
    algo: String,
    /// Worker threads (defaults to the available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides dataset.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset bundle read by `separate` and `evaluate`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Result bundle read by `evaluate`.
    #[arg(long)]
    result: Option<PathBuf>,
}

/// Errors the user can fix by changing the invocation or the config (exit 2).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() || e.is::<ConfigError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let level = log_level()?;
    let algo: Algorithm = cli
        .algo
        .parse()
        .map_err(|e: warpsep::Error| usage(e.to_string()))?;
    let mut cfg = RunConfig::from_file(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.dataset.seed = seed;
    }
    if cli.jobs == Some(0) {
        return Err(usage("--jobs must be ≥ 1"));
    }
    let dataset_dir = || {
        cli.dataset
            .clone()
            .ok_or_else(|| usage("--dataset <dir> is required for this command"))
    };
    let result_dir = || {
        cli.result
            .clone()
            .ok_or_else(|| usage("--result <dir> is required for evaluate"))
    };
    // check required paths before anything is written
    match cli.command {
        Command::Separate => {
            dataset_dir()?;
        }
        Command::Evaluate => {
            dataset_dir()?;
            result_dir()?;
        }
        _ => {}
    }

    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    init_logging(level, &cli.out.join("warpsep.log"))?;
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let start = Instant::now();
    info!("{:?} started, output in {}", cli.command, cli.out.display());

    match cli.command {
        Command::Synthesize => synthesize(&cfg, &cli.out)?,
        Command::Separate => separate_cmd(&cfg, &dataset_dir()?, algo, &cli.out)?,
        Command::Evaluate => evaluate_cmd(&dataset_dir()?, &result_dir()?, &cli.out)?,
        Command::Benchmark => benchmark(&cfg, &cli.out)?,
    }
    info!(
        "{:?} finished in {:.1} s",
        cli.command,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn log_level() -> anyhow::Result<LevelFilter> {
    match std::env::var("WARPSEP_LOG") {
        Err(_) => Ok(LevelFilter::Info),
        Ok(v) => match v.to_ascii_lowercase().as_str() {
            "error" => Ok(LevelFilter::Error),
            "info" => Ok(LevelFilter::Info),
            "debug" => Ok(LevelFilter::Debug),
            _ => Err(usage(format!(
                "WARPSEP_LOG must be error, info or debug, got {v:?}"
            ))),
        },
    }
}

/// Log records go to stderr and are appended to a log file in the output
/// directory; they are the only place timestamps appear.
struct Tee {
    file: File,
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> stdio::Result<usize> {
        self.file.write_all(buf)?;
        stdio::stderr().write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> stdio::Result<()> {
        self.file.flush()?;
        stdio::stderr().flush()
    }
}

fn init_logging(level: LevelFilter, path: &Path) -> anyhow::Result<()> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening log file {}", path.display()))?;
    env_logger::Builder::new()
        .filter_level(LevelFilter::Warn)
        .filter_module("warpsep", level)
        .target(env_logger::Target::Pipe(Box::new(Tee { file })))
        .try_init()
        .context("initialising the logger")
}

fn echo_config(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    bundle::write_json(&out.join("config.json"), cfg)?;
    Ok(())
}

fn synthesize(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let d = &cfg.dataset;
    let ds = cfg
        .generator()
        .generate(d.n, d.t, d.fs, d.seed)
        .context("generating the dataset")?;
    bundle::write_dataset(out, &ds)?;
    echo_config(cfg, out)?;
    info!("wrote {} sources × {} samples (seed {})", d.n, d.t, d.seed);
    Ok(())
}

fn separate_cmd(
    cfg: &RunConfig,
    dataset: &Path,
    algo: Algorithm,
    out: &Path,
) -> anyhow::Result<()> {
    let (z, _) = bundle::read_signal(&dataset.join(bundle::OBSERVATIONS))?;
    let sep_cfg = cfg.separator_config().with_exec(Exec::Parallel);
    let sep = separate(algo, &z, &sep_cfg).with_context(|| format!("running {algo}"))?;
    bundle::write_result(
        out,
        algo.name(),
        &sep.sources_hat,
        &sep.b_path,
        sep.bss.as_ref(),
    )?;
    echo_config(cfg, out)?;
    if let Some(b) = &sep.bss {
        info!(
            "{algo}: {} outer iterations, converged = {}",
            b.outer_iterations, b.converged
        );
    }
    Ok(())
}

fn evaluate_cmd(dataset: &Path, result: &Path, out: &Path) -> anyhow::Result<()> {
    let ds = bundle::read_dataset(dataset)?;
    let (y_hat, b_path, _) = bundle::read_result(result)?;
    if y_hat.n_channels() != ds.sources.n_channels() || y_hat.len() != ds.sources.len() {
        bail!(
            "shape mismatch: result has {}×{} samples, dataset sources are {}×{}",
            y_hat.n_channels(),
            y_hat.len(),
            ds.sources.n_channels(),
            ds.sources.len()
        );
    }
    let report = evaluate(&y_hat, &ds.sources, Some((&b_path, &ds.mixing)))?;
    bundle::write_metrics(out, &report)?;
    info!(
        "mean SIR {:.2} dB, mean rho {:.2} dB",
        report.mean_sir, report.rho_mean_db
    );
    Ok(())
}

fn benchmark(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let bc = cfg.benchmark_config();
    let report = run_benchmark(&bc, Exec::Parallel)?;
    bundle::write_benchmark(out, &report)?;
    echo_config(cfg, out)?;
    for row in &report.table {
        info!(
            "{:<10} SIR {:6.2} ± {:5.2} dB   rho {:7.2} ± {:5.2} dB   ({} trials)",
            row.algorithm.name(),
            row.sir_mean,
            row.sir_std,
            row.rho_mean_db,
            row.rho_std_db,
            row.trials
        );
    }
    if report.table.iter().any(|r| r.trials == 0) {
        bail!("every trial failed; see benchmark.json");
    }
    Ok(())
}
