//! Subcommands of the `abp` binary.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use abp_core::model::generate_grid;
use abp_core::oracle::{exact_marginals, OracleError};
use abp_core::{run, Clock, EngineConfig, Flow, ModelError, Method, Snapshot, WorkClock};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::clock::SystemClock;
use crate::reference::{cached_reference, ReferenceError};
use crate::sweep::{run_sweep, summary_csv, SweepConfig, SweepError};
use crate::trace::{TraceRecord, TraceWriter};
use crate::uai::{parse_uai, serialize_uai, UaiError};

#[derive(Debug, Parser)]
#[command(name = "abp", version, about = "Anytime belief propagation on sparse domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockArg {
    Wall,
    Work,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExactMode {
    /// Enumerate the joint state space.
    Enumerate,
    /// Dense residual BP to a tight tolerance.
    Reference,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic grid model in UAI format.
    Gen {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        domain: usize,
        #[arg(long, default_value_t = 1.0)]
        coupling: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one method on a model and append its trace as JSON lines.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = abp_core::engine::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        budget_ms: Option<f64>,
        #[arg(long)]
        max_updates: Option<u64>,
        /// Also snapshot every k factor updates.
        #[arg(long)]
        snapshot_every: Option<u64>,
        /// Reference cache; enables the error columns.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = abp_core::oracle::REFERENCE_EPSILON)]
        reference_epsilon: f64,
        #[arg(long, value_enum, default_value_t = ClockArg::Wall)]
        clock: ClockArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark sweep described by a JSON config and write a CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `out`; stdout if neither is set.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write exact (or tight reference) marginals as JSON.
    Exact {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = ExactMode::Enumerate)]
        mode: ExactMode,
        #[arg(long, default_value_t = abp_core::oracle::REFERENCE_EPSILON)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("model file {path}: {source}")]
    MissingModel { path: String, source: io::Error },
    #[error("unknown method {0:?} (expected one of dense-random, dense-residual, truncbp, random, fixed, dynamic)")]
    UnknownMethod(String),
    #[error("oracle failure: {0}")]
    Oracle(String),
    #[error("{path}: {source}")]
    Parse { path: String, source: UaiError },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::MissingModel { .. } => 3,
            CliError::UnknownMethod(_) => 4,
            CliError::Oracle(_) => 5,
            CliError::Parse { .. } | CliError::Invalid(_) => 6,
            CliError::Io { .. } => 1,
        })
    }
}

impl From<ReferenceError> for CliError {
    fn from(e: ReferenceError) -> Self {
        match e {
            ReferenceError::Oracle(o) => CliError::Oracle(o.to_string()),
            ReferenceError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::UnknownMethod(m) => CliError::UnknownMethod(m),
            SweepError::Reference(r) => r.into(),
            SweepError::Model(m) => CliError::Invalid(m.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_model(path: &Path) -> Result<abp_core::FactorGraph, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::MissingModel {
        path: path.display().to_string(),
        source,
    })?;
    parse_uai(&text).map_err(|source| CliError::Parse {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Serialize)]
struct ExactOutput<'a> {
    mode: &'a str,
    log_z: Option<f64>,
    epsilon: Option<f64>,
    marginals: Vec<Vec<f64>>,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen {
            rows,
            cols,
            domain,
            coupling,
            seed,
            out,
        } => {
            let g = generate_grid(rows, cols, domain, coupling, seed)
                .map_err(|e: ModelError| CliError::Invalid(e.to_string()))?;
            fs::write(&out, serialize_uai(&g)).map_err(io_err(&out))
        }
        Command::Run {
            model,
            method,
            epsilon,
            seed,
            budget_ms,
            max_updates,
            snapshot_every,
            reference,
            reference_epsilon,
            clock,
            out,
        } => {
            let method = Method::parse(&method).ok_or(CliError::UnknownMethod(method))?;
            if !(epsilon > 0.0) || budget_ms.is_some_and(|b| !(b >= 0.0)) {
                return Err(CliError::Invalid("epsilon must be positive and budgets nonnegative".into()));
            }
            let graph = load_model(&model)?;
            let reference = match &reference {
                Some(path) => Some(cached_reference(&graph, reference_epsilon, Some(path))?),
                None => None,
            };
            let mut config = EngineConfig::new(method);
            config.epsilon = epsilon;
            config.seed = seed;
            config.budget.max_ms = budget_ms;
            config.budget.max_updates = max_updates;
            config.cadence.every_updates = snapshot_every;
            let mut writer = TraceWriter::append(&out).map_err(io_err(&out))?;
            let result = match clock {
                ClockArg::Wall => trace_run(&graph, &config, &SystemClock::new(), reference.as_deref(), &mut writer),
                ClockArg::Work => trace_run(&graph, &config, &WorkClock::default(), reference.as_deref(), &mut writer),
            };
            result.map_err(io_err(&out))?;
            writer.finish().map_err(io_err(&out))
        }
        Command::Sweep { config, out } => {
            let text = fs::read_to_string(&config).map_err(io_err(&config))?;
            let cfg: SweepConfig =
                serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", config.display())))?;
            let csv = summary_csv(&run_sweep(&cfg)?);
            match out.or(cfg.out) {
                Some(path) => fs::write(&path, csv).map_err(io_err(&path)),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Exact {
            model,
            mode,
            epsilon,
            out,
        } => {
            let graph = load_model(&model)?;
            let output = match mode {
                ExactMode::Enumerate => {
                    let r = exact_marginals(&graph).map_err(|e: OracleError| CliError::Oracle(e.to_string()))?;
                    ExactOutput {
                        mode: "enumerate",
                        log_z: Some(r.log_z),
                        epsilon: None,
                        marginals: r.var_marginals,
                    }
                }
                ExactMode::Reference => ExactOutput {
                    mode: "reference",
                    log_z: None,
                    epsilon: Some(epsilon),
                    marginals: cached_reference(&graph, epsilon, None)?,
                },
            };
            let text = serde_json::to_string_pretty(&output).expect("marginals serialize");
            fs::write(&out, text).map_err(io_err(&out))
        }
    }
}

fn trace_run<C: Clock>(
    graph: &abp_core::FactorGraph,
    config: &EngineConfig,
    clock: &C,
    reference: Option<&[Vec<f64>]>,
    writer: &mut TraceWriter,
) -> io::Result<()> {
    let mut failure = None;
    run(graph, config, clock, &mut |s: &Snapshot| {
        let record = TraceRecord::from_snapshot(config.method.name(), config.seed, s, reference)
            .expect("reference matches the model");
        match writer.write(&record) {
            Ok(()) => Flow::Continue,
            Err(e) => {
                failure = Some(e);
                Flow::Stop
            }
        }
    });
    failure.map_or(Ok(()), Err)
}
