//! The anytime loop and the baseline engines.
//!
//! Every method shares one state representation, one message kernel and one
//! residual bookkeeping; they differ only in how domains are initialized and
//! grown and in how the next factor is chosen.
//!
//! | method           | domains                         | schedule |
//! |------------------|---------------------------------|----------|
//! | `dense-random`   | full                            | uniform random factor |
//! | `dense-residual` | full                            | residual queue |
//! | `truncbp`        | top 25% by precomputed priority | residual queue |
//! | `random`         | grown in random order           | residual queue |
//! | `fixed`          | grown by precomputed priority   | residual queue |
//! | `dynamic`        | grown by gradient estimate      | residual queue |
//!
//! Snapshot construction (exact residual sweep, Bethe value, dense marginals)
//! is excluded from the reported clock.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::growth::{
    grow_domain, initial_values, precomputed_priorities, random_queue, top_fraction_domains,
    DomainQueue, DynamicRefresher, GrowthPolicy,
};
use crate::model::{FactorGraph, FactorId, VariableId};
use crate::propagation::{consistency_violation, InitialPriority, Propagator};
use crate::sparse_state::SparseState;

/// Inference method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    DenseRandom,
    DenseResidual,
    TruncBp,
    Random,
    Fixed,
    Dynamic,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::DenseRandom,
        Method::DenseResidual,
        Method::TruncBp,
        Method::Random,
        Method::Fixed,
        Method::Dynamic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::DenseRandom => "dense-random",
            Method::DenseResidual => "dense-residual",
            Method::TruncBp => "truncbp",
            Method::Random => "random",
            Method::Fixed => "fixed",
            Method::Dynamic => "dynamic",
        }
    }

    pub fn parse(name: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn is_dense(self) -> bool {
        matches!(self, Method::DenseRandom | Method::DenseResidual)
    }

    pub fn growth_policy(self) -> Option<GrowthPolicy> {
        match self {
            Method::Random => Some(GrowthPolicy::Random),
            Method::Fixed => Some(GrowthPolicy::Fixed),
            Method::Dynamic => Some(GrowthPolicy::Dynamic),
            _ => None,
        }
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Source of time. `work` is the engine's deterministic work counter; a real
/// clock ignores it.
pub trait Clock {
    fn now_ns(&self, work: u64) -> u64;
}

/// Deterministic clock: elapsed time is work units times a fixed rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkClock {
    pub ns_per_unit: f64,
}

impl Default for WorkClock {
    fn default() -> Self {
        Self { ns_per_unit: 1.0 }
    }
}

impl Clock for WorkClock {
    fn now_ns(&self, work: u64) -> u64 {
        (work as f64 * self.ns_per_unit) as u64
    }
}

/// Resource limits; whichever binds first ends the run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Budget {
    pub max_ms: Option<f64>,
    pub max_updates: Option<u64>,
}

/// When to emit snapshots in addition to the final one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cadence {
    /// Emit at every k-th certified fixed point after growth (the initial
    /// fixed point counts as step 0).
    pub every_growth_steps: Option<u64>,
    /// Emit every k factor updates, certified or not.
    pub every_updates: Option<u64>,
    /// Emit every t clock milliseconds.
    pub every_ms: Option<f64>,
}

impl Default for Cadence {
    fn default() -> Self {
        Self {
            every_growth_steps: Some(1),
            every_updates: None,
            every_ms: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub method: Method,
    /// Residual tolerance on the log dynamic-range scale.
    pub epsilon: f64,
    pub seed: u64,
    pub budget: Budget,
    pub cadence: Cadence,
    /// Log-space damping weight on the old message, `0` disables.
    pub damping: f64,
    /// Fraction of each domain kept by `truncbp`.
    pub truncation_fraction: f64,
    /// Compute residual statistics, consistency and the Bethe value in
    /// snapshots. When off those fields are NaN and snapshots cost only the
    /// marginals.
    pub diagnostics: bool,
}

pub const DEFAULT_EPSILON: f64 = 1e-6;

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            method: Method::Dynamic,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            budget: Budget::default(),
            cadence: Cadence::default(),
            damping: 0.0,
            truncation_fraction: 0.25,
            diagnostics: true,
        }
    }
}

impl EngineConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotKind {
    /// Taken at a certified fixed point of the current sparse objective.
    Certified,
    /// Taken on the update or time cadence, possibly mid-convergence.
    Cadence,
    /// The terminal state of the run.
    Final,
}

/// Immutable view of the engine at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub kind: SnapshotKind,
    /// Clock time spent in inference, excluding snapshot construction.
    pub wall_clock_ms: f64,
    pub factor_updates: u64,
    pub work_units: u64,
    pub growth_steps: u64,
    /// `sum |S_i| / sum |D_i|`.
    pub domain_fill: f64,
    /// Dense over each full domain, exact zeros outside `S_i`.
    pub var_marginals: Vec<Vec<f64>>,
    /// Largest exact prospective residual over factors.
    pub max_residual: f64,
    /// Mean exact prospective residual over factors.
    pub avg_residual: f64,
    /// Largest residual bound in the message queue (may be `+inf`).
    pub queue_max: f64,
    /// `queue_max <= epsilon`.
    pub consistent: bool,
    /// Largest sparse local-polytope violation of the current beliefs.
    pub consistency_violation: f64,
    pub bethe_value: f64,
    pub budget_exhausted: bool,
}

/// Returned by the snapshot sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub final_snapshot: Snapshot,
    /// Most recent snapshot taken at a certified fixed point.
    pub last_consistent: Option<Snapshot>,
    /// Domains full and the final state certified.
    pub completed: bool,
    pub snapshots_emitted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Schedule {
    Residual,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Certified,
    Interrupted,
}

struct Engine<'g, 'c, 's, C: Clock + ?Sized> {
    config: &'g EngineConfig,
    clock: &'c C,
    sink: &'s mut dyn FnMut(&Snapshot) -> Flow,
    state: SparseState<'g>,
    prop: Propagator,
    domain_queue: Option<DomainQueue>,
    refresher: DynamicRefresher,
    rng: ChaCha8Rng,
    extra_work: u64,
    start_ns: u64,
    paused_ns: u64,
    growth_steps: u64,
    last_emit_updates: u64,
    last_emit_ms: f64,
    last_consistent: Option<Snapshot>,
    emitted: usize,
    stop_requested: bool,
    exhausted: bool,
}

impl<'g, 'c, 's, C: Clock + ?Sized> Engine<'g, 'c, 's, C> {
    fn work(&self) -> u64 {
        self.prop.work() + self.extra_work
    }

    fn elapsed_ms(&self) -> f64 {
        let now = self.clock.now_ns(self.work());
        now.saturating_sub(self.start_ns).saturating_sub(self.paused_ns) as f64 / 1e6
    }

    fn halted(&mut self) -> bool {
        if self.stop_requested || self.exhausted {
            return true;
        }
        let budget = self.config.budget;
        if budget.max_updates.is_some_and(|m| self.prop.updates() >= m)
            || budget.max_ms.is_some_and(|m| self.elapsed_ms() >= m)
        {
            self.exhausted = true;
        }
        self.exhausted
    }

    fn emit(&mut self, kind: SnapshotKind) {
        let t0 = self.clock.now_ns(self.work());
        let snap = self.snapshot(kind);
        if (self.sink)(&snap) == Flow::Stop {
            self.stop_requested = true;
        }
        self.emitted += 1;
        self.last_emit_updates = snap.factor_updates;
        self.last_emit_ms = snap.wall_clock_ms;
        if snap.consistent {
            self.last_consistent = Some(snap);
        }
        let t1 = self.clock.now_ns(self.work());
        self.paused_ns += t1.saturating_sub(t0);
    }

    fn snapshot(&mut self, kind: SnapshotKind) -> Snapshot {
        let wall_clock_ms = self.elapsed_ms();
        let graph = self.state.graph();
        let nf = graph.num_factors();
        let (mut max_residual, mut avg_residual, mut violation, mut bethe) = (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
        if self.config.diagnostics {
            let mut sum = 0.0;
            max_residual = 0.0;
            for f in 0..nf {
                let r = self.prop.prospective_residual(&self.state, FactorId(f));
                max_residual = max_residual.max(r);
                sum += r;
            }
            avg_residual = sum / nf.max(1) as f64;
            violation = consistency_violation(&self.state);
            bethe = self.state.bethe_objective();
        }
        let queue_max = self.prop.max_priority().max(0.0);
        Snapshot {
            kind,
            wall_clock_ms,
            factor_updates: self.prop.updates(),
            work_units: self.work(),
            growth_steps: self.growth_steps,
            domain_fill: self.state.domain_fill(),
            var_marginals: (0..graph.num_variables())
                .map(|i| self.state.var_belief_dense(VariableId(i)))
                .collect(),
            max_residual,
            avg_residual,
            queue_max,
            consistent: queue_max <= self.config.epsilon,
            consistency_violation: violation,
            bethe_value: bethe,
            budget_exhausted: self.exhausted,
        }
    }

    fn cadence_due(&self) -> bool {
        let c = self.config.cadence;
        c.every_updates
            .is_some_and(|k| self.prop.updates() - self.last_emit_updates >= k)
            || c.every_ms.is_some_and(|t| self.elapsed_ms() - self.last_emit_ms >= t)
    }

    fn converge(&mut self, schedule: Schedule) -> Phase {
        let epsilon = self.config.epsilon;
        let nf = self.state.graph().num_factors();
        loop {
            if self.prop.max_priority() <= epsilon {
                return Phase::Certified;
            }
            if self.halted() {
                return Phase::Interrupted;
            }
            let f = match schedule {
                Schedule::Residual => self.prop.select(epsilon).expect("queue max exceeds epsilon"),
                Schedule::Random => FactorId(self.rng.random_range(0..nf)),
            };
            self.prop.update_factor(&mut self.state, f);
            if self.cadence_due() {
                self.emit(SnapshotKind::Cadence);
            }
        }
    }

    fn certified_due(&self) -> bool {
        self.config
            .cadence
            .every_growth_steps
            .is_some_and(|k| k > 0 && self.growth_steps % k == 0)
    }

    fn finish(mut self, completed: bool) -> RunOutcome {
        let final_snapshot = self.snapshot(SnapshotKind::Final);
        if (self.sink)(&final_snapshot) == Flow::Stop {
            self.stop_requested = true;
        }
        self.emitted += 1;
        if final_snapshot.consistent {
            self.last_consistent = Some(final_snapshot.clone());
        }
        RunOutcome {
            completed: completed && final_snapshot.consistent,
            final_snapshot,
            last_consistent: self.last_consistent,
            snapshots_emitted: self.emitted,
        }
    }
}

/// Run `config.method` on `graph`, feeding every snapshot to `sink`.
pub fn run<C: Clock + ?Sized>(
    graph: &FactorGraph,
    config: &EngineConfig,
    clock: &C,
    sink: &mut dyn FnMut(&Snapshot) -> Flow,
) -> RunOutcome {
    if config.method.is_dense() {
        run_dense_with(graph, config, clock, sink)
    } else {
        run_anytime_with(graph, config, clock, sink)
    }
}

/// Anytime BP with the growth policy of `config.method` (or TruncBP),
/// timed by the deterministic [`WorkClock`].
pub fn run_anytime(graph: &FactorGraph, config: &EngineConfig, sink: &mut dyn FnMut(&Snapshot) -> Flow) -> RunOutcome {
    run_anytime_with(graph, config, &WorkClock::default(), sink)
}

/// Dense BP with the schedule of `config.method`, timed by [`WorkClock`].
pub fn run_dense(graph: &FactorGraph, config: &EngineConfig, sink: &mut dyn FnMut(&Snapshot) -> Flow) -> RunOutcome {
    run_dense_with(graph, config, &WorkClock::default(), sink)
}

fn propagator(graph: &FactorGraph, config: &EngineConfig, init: InitialPriority) -> Propagator {
    let p = Propagator::new(graph, init);
    if config.damping > 0.0 {
        p.with_damping(config.damping)
    } else {
        p
    }
}

/// Sparse-domain engine: TruncBP, Random, Fixed or Dynamic.
pub fn run_anytime_with<C: Clock + ?Sized>(
    graph: &FactorGraph,
    config: &EngineConfig,
    clock: &C,
    sink: &mut dyn FnMut(&Snapshot) -> Flow,
) -> RunOutcome {
    assert!(config.epsilon > 0.0, "epsilon must be positive");
    assert!(!config.method.is_dense(), "use run_dense for dense methods");
    let start_ns = clock.now_ns(0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let priorities = precomputed_priorities(graph);
    let setup_work: u64 = graph.factors().iter().map(|f| (f.log_potentials().len() * f.arity()) as u64).sum();
    let truncated = config.method == Method::TruncBp;
    let state = if truncated {
        SparseState::with_domains(graph, top_fraction_domains(&priorities, config.truncation_fraction))
    } else {
        SparseState::new(graph, &initial_values(&priorities))
    }
    .expect("initial domains come from the graph");
    let init = if truncated {
        InitialPriority::Stale
    } else {
        InitialPriority::Settled
    };
    let mut prop = propagator(graph, config, init);
    let mut refresher = DynamicRefresher::default();
    let mut extra_work = setup_work;
    let policy = config.method.growth_policy();
    let domain_queue = match policy {
        None => None,
        Some(GrowthPolicy::Fixed) => Some(DomainQueue::from_priorities(&state, |v, x| priorities[v.0][x])),
        Some(GrowthPolicy::Random) => Some(random_queue(&state, &mut rng)),
        Some(GrowthPolicy::Dynamic) => {
            prop.track_touched(graph.num_variables());
            let (q, w) = refresher.build_queue(&state);
            extra_work += w;
            Some(q)
        }
    };
    if let Some(q) = &domain_queue {
        extra_work += q.len() as u64;
    }

    let mut engine = Engine {
        config,
        clock,
        sink,
        state,
        prop,
        domain_queue,
        refresher,
        rng,
        extra_work,
        start_ns,
        paused_ns: 0,
        growth_steps: 0,
        last_emit_updates: 0,
        last_emit_ms: 0.0,
        last_consistent: None,
        emitted: 0,
        stop_requested: false,
        exhausted: false,
    };

    if engine.converge(Schedule::Residual) == Phase::Interrupted {
        return engine.finish(false);
    }
    engine.refresh_dynamic();
    if engine.certified_due() {
        engine.emit(SnapshotKind::Certified);
    }
    loop {
        let remaining = engine.domain_queue.as_ref().map_or(0, DomainQueue::len);
        if remaining == 0 {
            return engine.finish(true);
        }
        if engine.halted() {
            return engine.finish(false);
        }
        let depth = usize::BITS - remaining.leading_zeros();
        let queue = engine.domain_queue.as_mut().expect("checked above");
        grow_domain(&mut engine.state, queue, &mut engine.prop).expect("queue is nonempty");
        engine.extra_work += depth as u64;
        engine.growth_steps += 1;
        if engine.converge(Schedule::Residual) == Phase::Interrupted {
            return engine.finish(false);
        }
        engine.refresh_dynamic();
        if engine.certified_due() {
            engine.emit(SnapshotKind::Certified);
        }
    }
}

impl<'g, 'c, 's, C: Clock + ?Sized> Engine<'g, 'c, 's, C> {
    fn refresh_dynamic(&mut self) {
        if self.config.method != Method::Dynamic {
            return;
        }
        let touched = self.prop.take_touched();
        if let Some(q) = self.domain_queue.as_mut() {
            let stats = self.refresher.refresh(&self.state, q, &touched);
            self.extra_work += stats.work + stats.heap_updates as u64;
        }
    }
}

/// Dense engine: full domains from the start, random or residual schedule.
pub fn run_dense_with<C: Clock + ?Sized>(
    graph: &FactorGraph,
    config: &EngineConfig,
    clock: &C,
    sink: &mut dyn FnMut(&Snapshot) -> Flow,
) -> RunOutcome {
    assert!(config.epsilon > 0.0, "epsilon must be positive");
    let start_ns = clock.now_ns(0);
    let schedule = match config.method {
        Method::DenseRandom => Schedule::Random,
        Method::DenseResidual => Schedule::Residual,
        other => panic!("{other} is not a dense method"),
    };
    let mut engine = Engine {
        config,
        clock,
        sink,
        state: SparseState::full(graph),
        prop: propagator(graph, config, InitialPriority::Stale),
        domain_queue: None,
        refresher: DynamicRefresher::default(),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        extra_work: 0,
        start_ns,
        paused_ns: 0,
        growth_steps: 0,
        last_emit_updates: 0,
        last_emit_ms: 0.0,
        last_consistent: None,
        emitted: 0,
        stop_requested: false,
        exhausted: false,
    };
    let phase = engine.converge(schedule);
    if phase == Phase::Certified && engine.certified_due() {
        engine.emit(SnapshotKind::Certified);
    }
    engine.finish(phase == Phase::Certified)
}
