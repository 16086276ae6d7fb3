//! Domain growth: which `(variable, value)` to instantiate next.
//!
//! * **Fixed** ranks values once, by `sum_f log sum_{v_f : v_i = v} exp phi_f(v_f)`.
//! * **Dynamic** ranks values by the gradient estimate
//!   `d_i + sum_f lambda_hat_{f,i}(v)`, where `lambda_hat` is the log of the
//!   message `f` would send to `v` after one sparse update, normalized
//!   jointly over `S_i + {v}`. Priorities are refreshed only for variables
//!   near recomputed factors.
//! * **Random** uses seeded uniform priorities.

use alloc::vec;
use alloc::vec::Vec;

use libm::log;
use rand::Rng;
use thiserror::Error;

use crate::heap::IndexedMaxHeap;
use crate::logspace::log_sum_exp;
use crate::model::{FactorGraph, FactorId, VariableId};
use crate::propagation::Propagator;
use crate::sparse_state::{for_each_assignment, SparseState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GrowthPolicy {
    Dynamic,
    Fixed,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GrowthError {
    #[error("domain queue is empty: all domains are fully instantiated")]
    Exhausted,
}

/// Max-priority queue over flattened `(variable, value)` keys.
#[derive(Debug, Clone)]
pub struct DomainQueue {
    heap: IndexedMaxHeap,
    offsets: Vec<usize>,
}

impl DomainQueue {
    pub fn new(graph: &FactorGraph) -> Self {
        let mut offsets = Vec::with_capacity(graph.num_variables() + 1);
        let mut acc = 0;
        for &d in graph.domain_sizes() {
            offsets.push(acc);
            acc += d;
        }
        offsets.push(acc);
        Self {
            heap: IndexedMaxHeap::new(acc),
            offsets,
        }
    }

    /// Queue holding every non-instantiated value of `state`, inserted in
    /// `(variable, value)` order so ties resolve toward low indices.
    pub fn from_priorities(state: &SparseState<'_>, mut priority: impl FnMut(VariableId, usize) -> f64) -> Self {
        let graph = state.graph();
        let mut q = Self::new(graph);
        for i in 0..graph.num_variables() {
            let var = VariableId(i);
            let d = state.domain(var);
            for v in 0..d.full_size() {
                if !d.contains(v) {
                    q.set(var, v, priority(var, v));
                }
            }
        }
        q
    }

    fn key(&self, var: VariableId, value: usize) -> usize {
        debug_assert!(self.offsets[var.0] + value < self.offsets[var.0 + 1]);
        self.offsets[var.0] + value
    }

    fn decode(&self, key: usize) -> (VariableId, usize) {
        let var = self.offsets.partition_point(|&o| o <= key) - 1;
        (VariableId(var), key - self.offsets[var])
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn set(&mut self, var: VariableId, value: usize, priority: f64) {
        let k = self.key(var, value);
        self.heap.set(k, priority);
    }

    pub fn priority(&self, var: VariableId, value: usize) -> Option<f64> {
        self.heap.priority(self.key(var, value))
    }

    pub fn contains(&self, var: VariableId, value: usize) -> bool {
        self.heap.contains(self.key(var, value))
    }

    pub fn peek(&self) -> Option<(VariableId, usize, f64)> {
        self.heap.peek().map(|(k, p)| {
            let (var, value) = self.decode(k);
            (var, value, p)
        })
    }

    pub fn pop(&mut self) -> Option<(VariableId, usize, f64)> {
        self.heap.pop().map(|(k, p)| {
            let (var, value) = self.decode(k);
            (var, value, p)
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (VariableId, usize, f64)> + '_ {
        self.heap.iter().map(|(k, p)| {
            let (var, value) = self.decode(k);
            (var, value, p)
        })
    }
}

/// `sum_{f in N(i)} log sum_{v_f : v_i = v} exp phi_f(v_f)`.
pub fn precomputed_priority(graph: &FactorGraph, var: VariableId, value: usize) -> f64 {
    graph
        .factors_of(var)
        .iter()
        .map(|&f| graph.factor_row_logsumexp(f, var, value).expect("variable is a neighbor"))
        .sum()
}

/// Precomputed priorities for every variable and value.
pub fn precomputed_priorities(graph: &FactorGraph) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = graph.domain_sizes().iter().map(|&d| vec![0.0; d]).collect();
    for i in 0..graph.num_variables() {
        for e in graph.edges_of(VariableId(i)) {
            let rows = graph.factor_row_logsumexps(e.factor, e.slot);
            for (acc, r) in out[i].iter_mut().zip(rows) {
                *acc += r;
            }
        }
    }
    out
}

/// Index of the first maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = k;
        }
    }
    best
}

/// Highest-priority value per variable.
pub fn initial_values(priorities: &[Vec<f64>]) -> Vec<usize> {
    priorities.iter().map(|p| argmax(p)).collect()
}

/// The top `ceil(fraction * |D_i|)` values per variable (at least one),
/// best first; ties go to the lower value.
pub fn top_fraction_domains(priorities: &[Vec<f64>], fraction: f64) -> Vec<Vec<usize>> {
    priorities
        .iter()
        .map(|p| {
            let keep = libm::ceil(fraction * p.len() as f64).clamp(1.0, p.len() as f64) as usize;
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
            order.truncate(keep);
            order
        })
        .collect()
}

/// Scratch space for dynamic priorities.
#[derive(Debug, Clone, Default)]
pub(crate) struct PriorityScratch {
    lin_in: Vec<Vec<f64>>,
    log_in: Vec<Vec<f64>>,
    sums: Vec<f64>,
    full: Vec<usize>,
}

/// Fill `out[v]` with `d_i + sum_f lambda_hat_f(v)` for every `v` in the full
/// domain of `var` (entries for instantiated values are computed too but
/// are not candidates). Returns work units spent.
pub(crate) fn dynamic_priorities_into(
    state: &SparseState<'_>,
    var: VariableId,
    scratch: &mut PriorityScratch,
    out: &mut Vec<f64>,
) -> u64 {
    let graph = state.graph();
    let size = graph.domain_size(var);
    let domain = state.domain(var);
    out.clear();
    out.resize(size, graph.degree(var) as f64);
    let mut work = 0u64;
    for e in graph.edges_of(var) {
        work += row_sums(state, e.factor, e.slot, scratch);
        let sums = &scratch.sums;
        if sums.iter().all(|&s| s > 0.0 && s.is_finite()) {
            let z: f64 = domain.values().iter().map(|&u| sums[u]).sum();
            for v in 0..size {
                let denom = if domain.contains(v) { z } else { z + sums[v] };
                out[v] += log(sums[v]) - log(denom);
            }
        } else {
            let logs = row_logs(state, e.factor, e.slot, scratch);
            let instantiated: Vec<f64> = domain.values().iter().map(|&u| logs[u]).collect();
            let z = log_sum_exp(&instantiated);
            for v in 0..size {
                let denom = if domain.contains(v) {
                    z
                } else {
                    log_sum_exp(&[z, logs[v]])
                };
                out[v] += logs[v] - denom;
            }
        }
    }
    work
}

/// Linear, shifted `sum_{v_f in S_f, v_f[slot] = v} w(v_f) prod_{j != slot} m_{j->f}(v_j)`
/// for every `v` in the full domain of the slot variable, into `scratch.sums`.
fn row_sums(state: &SparseState<'_>, f: FactorId, slot: usize, scratch: &mut PriorityScratch) -> u64 {
    let graph = state.graph();
    let factor = graph.factor(f);
    let var = factor.neighbors()[slot];
    let size = graph.domain_size(var);
    let weights = factor.weights();
    let strides = factor.strides();
    scratch.sums.clear();
    if factor.arity() == 1 {
        scratch.sums.extend_from_slice(weights);
        return size as u64;
    }
    scratch.sums.resize(size, 0.0);
    let arity = factor.arity();
    while scratch.lin_in.len() < arity {
        scratch.lin_in.push(Vec::new());
        scratch.log_in.push(Vec::new());
    }
    let offset = graph.edge_offset(f);
    for (j, &u) in factor.neighbors().iter().enumerate() {
        if j == slot {
            continue;
        }
        state.var_to_factor_unnormalized(u, offset + j, &mut scratch.log_in[j]);
        let logs = &scratch.log_in[j];
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        scratch.lin_in[j].clear();
        scratch.lin_in[j].extend(logs.iter().map(|&x| libm::exp(x - max)));
    }
    if arity == 2 {
        let other = 1 - slot;
        let ov = state.domain(factor.neighbors()[other]).values();
        let (ss, so) = (strides[slot], strides[other]);
        let lin = &scratch.lin_in[other];
        for v in 0..size {
            let base = v * ss;
            let mut acc = 0.0;
            for (l, &x) in ov.iter().enumerate() {
                acc += weights[base + x * so] * lin[l];
            }
            scratch.sums[v] = acc;
        }
        return (size * ov.len()) as u64;
    }
    scratch.full.clear();
    scratch.full.extend(0..size);
    let lists: Vec<&[usize]> = factor
        .neighbors()
        .iter()
        .enumerate()
        .map(|(j, &u)| if j == slot { &scratch.full[..] } else { state.domain(u).values() })
        .collect();
    let mut visited = 0u64;
    let lin_in = &scratch.lin_in;
    let sums = &mut scratch.sums;
    for_each_assignment(&lists, strides, |local, idx| {
        let mut p = weights[idx];
        for (j, &l) in local.iter().enumerate() {
            if j != slot {
                p *= lin_in[j][l];
            }
        }
        sums[local[slot]] += p;
        visited += 1;
    });
    visited
}

/// Log-space version of [`row_sums`], used when linear sums underflow.
fn row_logs(state: &SparseState<'_>, f: FactorId, slot: usize, scratch: &mut PriorityScratch) -> Vec<f64> {
    let graph = state.graph();
    let factor = graph.factor(f);
    let size = graph.domain_size(factor.neighbors()[slot]);
    let phi = factor.log_potentials();
    let offset = graph.edge_offset(f);
    let mut log_in: Vec<Vec<f64>> = vec![Vec::new(); factor.arity()];
    for (j, &u) in factor.neighbors().iter().enumerate() {
        if j != slot {
            state.var_to_factor_unnormalized(u, offset + j, &mut log_in[j]);
        }
    }
    scratch.full.clear();
    scratch.full.extend(0..size);
    let lists: Vec<&[usize]> = factor
        .neighbors()
        .iter()
        .enumerate()
        .map(|(j, &u)| if j == slot { &scratch.full[..] } else { state.domain(u).values() })
        .collect();
    let mut terms: Vec<Vec<f64>> = vec![Vec::new(); size];
    for_each_assignment(&lists, factor.strides(), |local, idx| {
        let mut x = phi[idx];
        for (j, &l) in local.iter().enumerate() {
            if j != slot {
                x += log_in[j][l];
            }
        }
        terms[local[slot]].push(x);
    });
    terms.iter().map(|t| log_sum_exp(t)).collect()
}

/// Dynamic priority of a single candidate value `value` of `var`.
pub fn dynamic_priority(state: &SparseState<'_>, var: VariableId, value: usize) -> f64 {
    let mut scratch = PriorityScratch::default();
    let mut out = Vec::new();
    dynamic_priorities_into(state, var, &mut scratch, &mut out);
    out[value]
}

/// Pop the best `(variable, value)`, instantiate it, and mark every factor
/// adjacent to the variable for recomputation.
pub fn grow_domain(
    state: &mut SparseState<'_>,
    domain_queue: &mut DomainQueue,
    propagator: &mut Propagator,
) -> Result<(VariableId, usize), GrowthError> {
    let (var, value, _) = domain_queue.pop().ok_or(GrowthError::Exhausted)?;
    state
        .add_value(var, value)
        .expect("queued values are never instantiated");
    for &f in state.graph().factors_of(var) {
        propagator.mark_stale(f);
    }
    Ok((var, value))
}

/// Bookkeeping from one refresh pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RefreshStats {
    pub heap_updates: usize,
    pub work: u64,
}

/// Reusable refresher for dynamic priorities.
#[derive(Debug, Clone, Default)]
pub struct DynamicRefresher {
    scratch: PriorityScratch,
    buf: Vec<f64>,
}

impl DynamicRefresher {
    pub fn refresh(
        &mut self,
        state: &SparseState<'_>,
        domain_queue: &mut DomainQueue,
        touched: &[VariableId],
    ) -> RefreshStats {
        let mut stats = RefreshStats::default();
        for &var in touched {
            let domain = state.domain(var);
            if domain.is_full() {
                continue;
            }
            stats.work += dynamic_priorities_into(state, var, &mut self.scratch, &mut self.buf);
            for (v, &p) in self.buf.iter().enumerate() {
                if !domain.contains(v) {
                    domain_queue.set(var, v, p);
                    stats.heap_updates += 1;
                }
            }
        }
        stats
    }

    /// Dynamic-priority queue over every non-instantiated value of `state`.
    pub fn build_queue(&mut self, state: &SparseState<'_>) -> (DomainQueue, u64) {
        let graph = state.graph();
        let mut q = DomainQueue::new(graph);
        let mut work = 0;
        for i in 0..graph.num_variables() {
            let var = VariableId(i);
            work += dynamic_priorities_into(state, var, &mut self.scratch, &mut self.buf);
            let domain = state.domain(var);
            for (v, &p) in self.buf.iter().enumerate() {
                if !domain.contains(v) {
                    q.set(var, v, p);
                }
            }
        }
        (q, work)
    }
}

/// Recompute dynamic priorities of all candidate values of `touched` only.
pub fn refresh_dynamic_priorities(
    state: &SparseState<'_>,
    domain_queue: &mut DomainQueue,
    touched: &[VariableId],
) -> RefreshStats {
    DynamicRefresher::default().refresh(state, domain_queue, touched)
}

/// Seeded uniform priorities for every non-instantiated value.
pub fn random_queue(state: &SparseState<'_>, rng: &mut impl Rng) -> DomainQueue {
    DomainQueue::from_priorities(state, |_, _| rng.random::<f64>())
}
