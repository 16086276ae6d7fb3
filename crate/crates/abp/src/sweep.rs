//! Benchmark sweeps: methods x domain sizes x seeds on synthetic grids.
//!
//! Cells run on a worker pool and are merged by cell key, so the CSV does not
//! depend on scheduling. With the default work clock every column is
//! reproducible bit-for-bit.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use abp_core::metrics::l2_error;
use abp_core::model::generate_grid;
use abp_core::{run, Clock, EngineConfig, Flow, FactorGraph, Method, ModelError, WorkClock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SystemClock;
use crate::reference::{cached_reference, ReferenceError};

/// Environment variable overriding the worker-pool size.
pub const WORKERS_ENV: &str = "ABP_WORKERS";

pub const CSV_HEADER: &str = "method,domain_size,seed,time_to_threshold_ms,factor_updates,converged";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    /// Deterministic: `ns_per_unit` per unit of engine work.
    #[default]
    Work,
    Wall,
}

fn default_methods() -> Vec<String> {
    Method::ALL.iter().map(|m| m.name().to_owned()).collect()
}

fn default_size() -> usize {
    5
}

fn default_threshold() -> f64 {
    1e-4
}

fn default_epsilon() -> f64 {
    abp_core::engine::DEFAULT_EPSILON
}

fn default_reference_epsilon() -> f64 {
    abp_core::oracle::REFERENCE_EPSILON
}

fn default_coupling() -> f64 {
    1.0
}

fn default_ns_per_unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_size")]
    pub rows: usize,
    #[serde(default = "default_size")]
    pub cols: usize,
    pub domain_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_coupling")]
    pub coupling: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    /// Variable-mean L2 error that counts as reaching the reference.
    #[serde(default = "default_threshold")]
    pub threshold_l2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_reference_epsilon")]
    pub reference_epsilon: f64,
    #[serde(default)]
    pub budget_ms: Option<f64>,
    #[serde(default)]
    pub max_updates: Option<u64>,
    /// Snapshot every k factor updates; defaults to the factor count.
    #[serde(default)]
    pub snapshot_every: Option<u64>,
    #[serde(default)]
    pub clock: ClockKind,
    #[serde(default = "default_ns_per_unit")]
    pub ns_per_unit: f64,
    #[serde(default)]
    pub reference_cache: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("invalid grid: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
}

/// One `(method, domain size, seed)` result.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub method: Method,
    pub domain_size: usize,
    pub seed: u64,
    /// Clock time of the first snapshot under the threshold.
    pub time_to_threshold_ms: Option<f64>,
    /// Factor updates at that snapshot, or at the end of the run.
    pub factor_updates: u64,
    pub converged: bool,
}

pub fn worker_count(config: Option<usize>) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .or(config)
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Apply `job` to every index on `workers` threads; results come back in
/// index order.
pub fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(len: usize, workers: usize, job: F) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..len).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, len.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= len {
                    break;
                }
                let r = job(i);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every cell ran")).collect()
}

/// Time for `config` to bring `graph` within `threshold` L2 of `reference`.
pub fn time_to_threshold<C: Clock>(
    graph: &FactorGraph,
    reference: &[Vec<f64>],
    threshold: f64,
    config: &EngineConfig,
    clock: &C,
) -> (Option<f64>, u64) {
    let mut hit = None;
    let outcome = run(graph, config, clock, &mut |s| {
        let l2 = l2_error(&s.var_marginals, reference).expect("reference matches the graph");
        if l2 < threshold {
            hit = Some((s.wall_clock_ms, s.factor_updates));
            Flow::Stop
        } else {
            Flow::Continue
        }
    });
    match hit {
        Some((t, u)) => (Some(t), u),
        None => (None, outcome.final_snapshot.factor_updates),
    }
}

pub fn run_sweep(config: &SweepConfig) -> Result<Vec<CellResult>, SweepError> {
    let methods: Vec<Method> = config
        .methods
        .iter()
        .map(|m| Method::parse(m).ok_or_else(|| SweepError::UnknownMethod(m.clone())))
        .collect::<Result<_, _>>()?;
    let workers = worker_count(config.workers);

    let models: Vec<(usize, u64)> = config
        .domain_sizes
        .iter()
        .flat_map(|&l| config.seeds.iter().map(move |&s| (l, s)))
        .collect();
    let graphs: Vec<FactorGraph> = models
        .iter()
        .map(|&(l, s)| generate_grid(config.rows, config.cols, l, config.coupling, s))
        .collect::<Result<_, _>>()?;
    let references: Vec<Vec<Vec<f64>>> = match &config.reference_cache {
        // The cache file is shared, so cached references are resolved serially.
        Some(path) => graphs
            .iter()
            .map(|g| cached_reference(g, config.reference_epsilon, Some(path)))
            .collect::<Result<_, _>>()?,
        None => parallel_map(graphs.len(), workers, |i| {
            cached_reference(&graphs[i], config.reference_epsilon, None)
        })
        .into_iter()
        .collect::<Result<_, _>>()?,
    };

    let cells: Vec<(usize, Method)> = (0..models.len())
        .flat_map(|mi| methods.iter().map(move |&m| (mi, m)))
        .collect();
    let mut results = parallel_map(cells.len(), workers, |ci| {
        let (mi, method) = cells[ci];
        let (domain_size, seed) = models[mi];
        let graph = &graphs[mi];
        let mut engine = EngineConfig::new(method);
        engine.seed = seed;
        engine.epsilon = config.epsilon;
        engine.budget.max_ms = config.budget_ms;
        engine.budget.max_updates = config.max_updates;
        engine.cadence.every_updates = Some(config.snapshot_every.unwrap_or(graph.num_factors() as u64));
        let (t, updates) = match config.clock {
            ClockKind::Work => time_to_threshold(
                graph,
                &references[mi],
                config.threshold_l2,
                &engine,
                &WorkClock {
                    ns_per_unit: config.ns_per_unit,
                },
            ),
            ClockKind::Wall => {
                time_to_threshold(graph, &references[mi], config.threshold_l2, &engine, &SystemClock::new())
            }
        };
        CellResult {
            method,
            domain_size,
            seed,
            time_to_threshold_ms: t,
            factor_updates: updates,
            converged: t.is_some(),
        }
    });
    results.sort_by(|a, b| (a.method, a.domain_size, a.seed).cmp(&(b.method, b.domain_size, b.seed)));
    Ok(results)
}

/// Per-cell rows followed by one `mean` row per `(method, domain size)`.
/// Mean time is over seeds that reached the threshold; `converged` becomes
/// the fraction that did.
pub fn summary_csv(results: &[CellResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let fmt_t = |t: Option<f64>| t.map_or(String::new(), |t| t.to_string());
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method,
            r.domain_size,
            r.seed,
            fmt_t(r.time_to_threshold_ms),
            r.factor_updates,
            r.converged
        ));
    }
    let mut groups: Vec<(Method, usize)> = results.iter().map(|r| (r.method, r.domain_size)).collect();
    groups.dedup();
    for (method, l) in groups {
        let group: Vec<&CellResult> = results.iter().filter(|r| r.method == method && r.domain_size == l).collect();
        let hits: Vec<f64> = group.iter().filter_map(|r| r.time_to_threshold_ms).collect();
        let mean_t = (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64);
        let mean_u = group.iter().map(|r| r.factor_updates as f64).sum::<f64>() / group.len() as f64;
        out.push_str(&format!(
            "{},{},mean,{},{},{}\n",
            method,
            l,
            fmt_t(mean_t),
            mean_u,
            hits.len() as f64 / group.len() as f64
        ));
    }
    out
}
