//! `handoff`: validate, run and sweep simulator scenarios.
//!
//! Exit codes: 0 on success, 1 when a check fails or a config is invalid,
//! 2 on usage errors and unreadable configs.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use handoff::checker::{check_scenario, sweep, CheckOptions, SweepRow};
use handoff::sim::{
    run, write_jsonl, ConfigError, PayloadKind, ScenarioConfig, SimError, SimPayload,
};
use handoff::{MapPayload, Metrics, Nat, PnPayload};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "handoff", version, about = "Handoff counter simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario config without running it.
    Validate { config: PathBuf },
    /// Run one scenario and print its metrics, or its verdict with --check.
    Run(RunArgs),
    /// Check a scenario over a range of seeds and print a CSV summary.
    Sweep(SweepArgs),
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long, env = "HANDOFF_SEED")]
    seed: Option<u64>,
    /// Write the event trace here, one JSON object per line.
    #[arg(long, env = "HANDOFF_TRACE_OUT")]
    trace_out: Option<PathBuf>,
    /// Write metrics here; CSV if the name ends in .csv, JSON otherwise.
    #[arg(long, env = "HANDOFF_METRICS_OUT")]
    metrics_out: Option<PathBuf>,
    /// Check invariants, quiescence and garbage collection.
    #[arg(long)]
    check: bool,
    /// Compare against the naive counter. Implies --check.
    #[arg(long)]
    oracle: bool,
    /// Also compare full-state and view runs. Implies --check.
    #[arg(long)]
    view_compare: bool,
}

#[derive(Debug, clap::Args)]
struct SweepArgs {
    config: PathBuf,
    /// Number of seeds to check.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// First seed of the range.
    #[arg(long, default_value_t = 1)]
    first: u64,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(ConfigError),
    #[error("{0}")]
    Failed(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Config(ConfigError::Io { .. } | ConfigError::Parse(_) | ConfigError::Version(_)) => 2,
            CliError::Config(_) | CliError::Failed(_) => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CliError::Config(c),
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, CliError> {
    ScenarioConfig::load(path).map_err(CliError::Config)
}

fn validate(path: &Path) -> Result<(), CliError> {
    let cfg = load(path)?;
    match cfg.resolve() {
        Ok(topo) => {
            println!("ok: {} nodes, {} links", topo.nodes().len(), topo.links().len());
            Ok(())
        }
        Err(ConfigError::Topology(violations)) => {
            for v in &violations {
                println!("{v}");
            }
            Err(CliError::Failed(format!("{} topology violations", violations.len())))
        }
        Err(e) => Err(CliError::Config(e)),
    }
}

fn write_metrics(path: &Path, metrics: &Metrics) -> Result<(), CliError> {
    let out = create(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut w = csv::Writer::from_writer(out);
        w.serialize(metrics)
            .and_then(|()| w.flush().map_err(Into::into))
            .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
    } else {
        write_json(out, metrics).map_err(io_err(path))
    }
}

fn write_json(mut out: impl Write, value: &impl Serialize) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()
}

fn run_with<P: SimPayload>(cfg: &ScenarioConfig, args: &RunArgs) -> Result<(), CliError> {
    let check = args.check || args.oracle || args.view_compare;
    let (trace, metrics, verdict) = if check {
        let opts = CheckOptions {
            quiesce: true,
            oracle: args.oracle,
            view_compare: args.view_compare,
            record_trace: args.trace_out.is_some(),
        };
        let c = check_scenario::<P>(cfg, opts, None)?;
        (c.trace, c.verdict.metrics.clone(), Some(c.verdict))
    } else {
        let out = run::<P>(cfg)?;
        (out.trace, out.metrics, None)
    };
    if let Some(path) = &args.trace_out {
        let mut out = create(path)?;
        write_jsonl(&trace, &mut out)
            .and_then(|()| out.flush())
            .map_err(io_err(path))?;
    }
    if let Some(path) = &args.metrics_out {
        write_metrics(path, &metrics)?;
    }
    let stdout = io::stdout().lock();
    match verdict {
        Some(v) => {
            write_json(stdout, &v).map_err(io_err(Path::new("stdout")))?;
            if !v.passed {
                return Err(CliError::Failed(format!("seed {} failed its checks", v.seed)));
            }
        }
        None => write_json(stdout, &metrics).map_err(io_err(Path::new("stdout")))?,
    }
    Ok(())
}

fn run_cmd(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    match cfg.payload {
        PayloadKind::Nat => run_with::<Nat>(&cfg, args),
        PayloadKind::Map => run_with::<MapPayload>(&cfg, args),
        PayloadKind::Pn => run_with::<PnPayload>(&cfg, args),
    }
}

fn sweep_cmd(args: &SweepArgs) -> Result<(), CliError> {
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let cfg = load(&args.config)?;
    cfg.resolve().map_err(CliError::Config)?;
    let seeds: Vec<u64> = (args.first..args.first + args.seeds).collect();
    let opts = CheckOptions::default();
    let outcomes = match cfg.payload {
        PayloadKind::Nat => sweep::<Nat>(&cfg, &seeds, opts),
        PayloadKind::Map => sweep::<MapPayload>(&cfg, &seeds, opts),
        PayloadKind::Pn => sweep::<PnPayload>(&cfg, &seeds, opts),
    };
    let rows: Vec<SweepRow> = outcomes.iter().map(|o| o.row()).collect();

    let out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(out);
    for row in &rows {
        w.serialize(row)
            .map_err(|e| CliError::Failed(format!("writing summary: {e}")))?;
    }
    w.flush().map_err(io_err(Path::new("summary")))?;

    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.seed.to_string())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failing seeds: {}", failed.join(" "))))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Validate { config } => validate(config),
        Command::Run(args) => run_cmd(args),
        Command::Sweep(args) => sweep_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("handoff: {e}");
            ExitCode::from(e.code())
        }
    }
}
