//! Sparse sum-product updates and residual scheduling.
//!
//! A factor's priority in the message queue is an upper bound on the dynamic
//! range of the change its outgoing messages would undergo if recomputed now.
//! Recomputing a factor resets its bound to zero; every committed message
//! `m_{f->j}` with residual `r` raises the bound of each other multi-variable
//! factor at `j` by `r`. This works because the log-ratio of a sum-product
//! output to its previous value lies within the sum of the incoming log-ratio
//! ranges. A queue whose maximum is at most `epsilon` therefore certifies a
//! fixed point to within `epsilon` without lookahead recomputation.
//! Factors whose input support changed (domain growth) carry `+inf` until
//! they are recomputed.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};

use crate::heap::IndexedMaxHeap;
use crate::logspace::normalize_log;
use crate::model::{FactorGraph, FactorId, VariableId};
use crate::sparse_state::{for_each_assignment, SparseState};

/// Dynamic range of `new / old` on the log scale: `max(new - old) - min(new - old)`.
/// Tables of different length have no common support and yield `+inf`.
pub fn residual(old: &[f64], new: &[f64]) -> f64 {
    if old.len() != new.len() {
        return f64::INFINITY;
    }
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    for (o, n) in old.iter().zip(new) {
        let d = n - o;
        hi = hi.max(d);
        lo = lo.min(d);
    }
    if old.is_empty() {
        0.0
    } else {
        (hi - lo).max(0.0)
    }
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(exp(lo - hi))
}

/// Scratch buffers for the message kernel.
#[derive(Debug, Clone, Default)]
pub(crate) struct Workspace {
    log_in: Vec<Vec<f64>>,
    lin_in: Vec<Vec<f64>>,
    lin_out: Vec<Vec<f64>>,
    /// Normalized log outputs, one per slot of the last computed factor.
    pub(crate) out: Vec<Vec<f64>>,
}

impl Workspace {
    fn ensure(&mut self, arity: usize) {
        while self.out.len() < arity {
            self.log_in.push(Vec::new());
            self.lin_in.push(Vec::new());
            self.lin_out.push(Vec::new());
            self.out.push(Vec::new());
        }
    }
}

/// Compute all outgoing messages of `f` into `ws.out[..arity]`. Returns the
/// number of joint assignments visited.
pub(crate) fn compute_into(state: &SparseState<'_>, f: FactorId, ws: &mut Workspace) -> u64 {
    let graph = state.graph();
    let factor = graph.factor(f);
    let arity = factor.arity();
    ws.ensure(arity);
    let nbrs = factor.neighbors();

    if arity == 1 {
        let values = state.domain(nbrs[0]).values();
        let phi = factor.log_potentials();
        let out = &mut ws.out[0];
        out.clear();
        out.extend(values.iter().map(|&v| phi[v]));
        normalize_log(out);
        return values.len() as u64;
    }

    let offset = graph.edge_offset(f);
    for (slot, &v) in nbrs.iter().enumerate() {
        state.var_to_factor_unnormalized(v, offset + slot, &mut ws.log_in[slot]);
        let logs = &ws.log_in[slot];
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lin = &mut ws.lin_in[slot];
        lin.clear();
        lin.extend(logs.iter().map(|&x| exp(x - max)));
        let out = &mut ws.lin_out[slot];
        out.clear();
        out.resize(logs.len(), 0.0);
    }

    let weights = factor.weights();
    let strides = factor.strides();
    let visited: u64;
    if arity == 2 {
        let (a, b) = (nbrs[0], nbrs[1]);
        let (sa, sb) = (strides[0], strides[1]);
        let va = state.domain(a).values();
        let vb = state.domain(b).values();
        visited = (va.len() * vb.len()) as u64;
        let (lin_a, lin_b) = (&ws.lin_in[0], &ws.lin_in[1]);
        let (first, rest) = ws.lin_out.split_at_mut(1);
        let out_a = &mut first[0];
        let out_b = &mut rest[0];
        for (ka, &xa) in va.iter().enumerate() {
            let base = xa * sa;
            let ia = lin_a[ka];
            let mut row = 0.0;
            for (kb, &xb) in vb.iter().enumerate() {
                let w = weights[base + xb * sb];
                row += w * lin_b[kb];
                out_b[kb] += w * ia;
            }
            out_a[ka] = row;
        }
    } else {
        let lists: Vec<&[usize]> = nbrs.iter().map(|&v| state.domain(v).values()).collect();
        visited = lists.iter().map(|l| l.len() as u64).product();
        let lin_in = &ws.lin_in;
        let lin_out = &mut ws.lin_out;
        for_each_assignment(&lists, strides, |local, idx| {
            let w = weights[idx];
            for i in 0..arity {
                let mut p = w;
                for (j, &l) in local.iter().enumerate() {
                    if j != i {
                        p *= lin_in[j][l];
                    }
                }
                lin_out[i][local[i]] += p;
            }
        });
    }

    let mut degenerate = false;
    for slot in 0..arity {
        let lin = &ws.lin_out[slot];
        let total: f64 = lin.iter().sum();
        let out = &mut ws.out[slot];
        out.clear();
        if !(total > 0.0 && total.is_finite()) || lin.iter().any(|&x| x <= 0.0) {
            degenerate = true;
            continue;
        }
        let lt = log(total);
        out.extend(lin.iter().map(|&x| log(x) - lt));
    }
    if degenerate {
        compute_log_space(state, f, ws);
    }
    visited
}

/// Pure log-space kernel, used when the shifted linear sums underflow.
fn compute_log_space(state: &SparseState<'_>, f: FactorId, ws: &mut Workspace) {
    let factor = state.graph().factor(f);
    let arity = factor.arity();
    let phi = factor.log_potentials();
    let lists: Vec<&[usize]> = factor
        .neighbors()
        .iter()
        .map(|&v| state.domain(v).values())
        .collect();
    for slot in 0..arity {
        let out = &mut ws.out[slot];
        out.clear();
        out.resize(lists[slot].len(), f64::NEG_INFINITY);
    }
    let log_in = &ws.log_in;
    let out = &mut ws.out;
    for_each_assignment(&lists, factor.strides(), |local, idx| {
        let total: f64 = phi[idx] + local.iter().enumerate().map(|(j, &l)| log_in[j][l]).sum::<f64>();
        for i in 0..arity {
            let x = total - log_in[i][local[i]];
            out[i][local[i]] = log_add_exp(out[i][local[i]], x);
        }
    });
    for slot in 0..arity {
        normalize_log(&mut ws.out[slot]);
    }
}

/// New normalized log messages from `f` to each of its neighbors, in slot
/// order, given the current variable-to-factor messages.
pub fn compute_factor_messages(state: &SparseState<'_>, f: FactorId) -> Vec<Vec<f64>> {
    let mut ws = Workspace::default();
    compute_into(state, f, &mut ws);
    ws.out.truncate(state.graph().factor(f).arity());
    ws.out
}

/// Largest violation of the sparse local-polytope constraints:
/// `|mu_i(v) - sum_{v_f / x_i} mu_f(v_f)|` over instantiated values and
/// `|1 - sum mu_f|` over factors.
pub fn consistency_violation(state: &SparseState<'_>) -> f64 {
    let graph = state.graph();
    let mut worst: f64 = 0.0;
    for fi in 0..graph.num_factors() {
        let f = FactorId(fi);
        let factor = graph.factor(f);
        let belief = state.factor_belief(f);
        worst = worst.max((1.0 - belief.iter().sum::<f64>()).abs());
        let lists: Vec<&[usize]> = factor
            .neighbors()
            .iter()
            .map(|&v| state.domain(v).values())
            .collect();
        let mut marginals: Vec<Vec<f64>> = lists.iter().map(|l| vec![0.0; l.len()]).collect();
        let mut k = 0;
        for_each_assignment(&lists, factor.strides(), |local, _| {
            for (slot, &l) in local.iter().enumerate() {
                marginals[slot][l] += belief[k];
            }
            k += 1;
        });
        for (slot, &v) in factor.neighbors().iter().enumerate() {
            let mu = state.var_belief(v);
            for (a, b) in mu.iter().zip(&marginals[slot]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Outcome of one convergence phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    /// Factor updates performed in this phase.
    pub updates: u64,
    /// Queue maximum when the phase ended.
    pub max_residual: f64,
    /// `max_residual <= epsilon`.
    pub certified: bool,
}

/// How a fresh queue is seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialPriority {
    /// All factors at zero: the state is already a fixed point (singletons).
    Settled,
    /// All factors at `+inf`: every factor must be recomputed.
    Stale,
}

/// Variables whose candidate-value priorities may have changed.
#[derive(Debug, Clone)]
struct TouchSet {
    flag: Vec<bool>,
    list: Vec<VariableId>,
}

/// Message queue plus kernel scratch space and work counters.
#[derive(Debug, Clone)]
pub struct Propagator {
    queue: IndexedMaxHeap,
    ws: Workspace,
    residuals: Vec<f64>,
    damping: f64,
    updates: u64,
    work: u64,
    touched: Option<TouchSet>,
}

impl Propagator {
    pub fn new(graph: &FactorGraph, init: InitialPriority) -> Self {
        let mut queue = IndexedMaxHeap::new(graph.num_factors());
        let p = match init {
            InitialPriority::Settled => 0.0,
            InitialPriority::Stale => f64::INFINITY,
        };
        for f in 0..graph.num_factors() {
            queue.set(f, p);
        }
        Self {
            queue,
            ws: Workspace::default(),
            residuals: Vec::new(),
            damping: 0.0,
            updates: 0,
            work: 0,
            touched: None,
        }
    }

    /// Geometric damping in log space: the committed message is
    /// `(1 - alpha) * new + alpha * old`, renormalized.
    pub fn with_damping(mut self, alpha: f64) -> Self {
        assert!((0.0..1.0).contains(&alpha), "damping must lie in [0, 1)");
        self.damping = alpha;
        self
    }

    /// Record variables whose dynamic priorities need refreshing.
    pub fn track_touched(&mut self, num_variables: usize) {
        self.touched = Some(TouchSet {
            flag: vec![false; num_variables],
            list: Vec::new(),
        });
    }

    /// Drain the set of touched variables.
    pub fn take_touched(&mut self) -> Vec<VariableId> {
        match &mut self.touched {
            Some(t) => {
                for v in &t.list {
                    t.flag[v.0] = false;
                }
                core::mem::take(&mut t.list)
            }
            None => Vec::new(),
        }
    }

    pub fn queue(&self) -> &IndexedMaxHeap {
        &self.queue
    }

    pub fn max_priority(&self) -> f64 {
        self.queue.max_priority()
    }

    /// Mean queue priority over all factors.
    pub fn mean_priority(&self) -> f64 {
        let n = self.queue.len().max(1) as f64;
        self.queue.iter().map(|(_, p)| p).sum::<f64>() / n
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Deterministic work counter (joint assignments visited plus queue
    /// bookkeeping).
    pub fn work(&self) -> u64 {
        self.work
    }

    /// Force `f` to be recomputed before the next certification.
    pub fn mark_stale(&mut self, f: FactorId) {
        self.queue.set(f.0, f64::INFINITY);
    }

    /// Highest-priority factor if its bound exceeds `epsilon`.
    pub fn select(&self, epsilon: f64) -> Option<FactorId> {
        match self.queue.peek() {
            Some((f, p)) if p > epsilon => Some(FactorId(f)),
            _ => None,
        }
    }

    /// Recompute and commit all outgoing messages of `f`, then re-prioritize
    /// the factors that read them. Returns the largest committed residual.
    pub fn update_factor(&mut self, state: &mut SparseState<'_>, f: FactorId) -> f64 {
        let graph = state.graph();
        let factor = graph.factor(f);
        let arity = factor.arity();
        self.work += compute_into(state, f, &mut self.ws);
        let offset = graph.edge_offset(f);
        self.residuals.clear();
        let mut worst: f64 = 0.0;
        for slot in 0..arity {
            let old = state.factor_to_var(offset + slot);
            let r = residual(old, &self.ws.out[slot]);
            if self.damping > 0.0 && old.len() == self.ws.out[slot].len() {
                let a = self.damping;
                for (n, o) in self.ws.out[slot].iter_mut().zip(old) {
                    *n = (1.0 - a) * *n + a * o;
                }
                normalize_log(&mut self.ws.out[slot]);
                self.residuals.push((1.0 - a) * r);
            } else {
                self.residuals.push(r);
            }
            worst = worst.max(r);
            self.work += old.len() as u64;
        }
        state.commit_factor_messages(f, &self.ws.out[..arity]);
        let remaining = if self.damping > 0.0 { self.damping * worst } else { 0.0 };
        self.queue.set(f.0, remaining);
        self.distribute(graph, f);
        self.updates += 1;
        worst
    }

    fn distribute(&mut self, graph: &FactorGraph, f: FactorId) {
        let factor = graph.factor(f);
        for (slot, &j) in factor.neighbors().iter().enumerate() {
            let r = self.residuals[slot];
            for e in graph.edges_of(j) {
                let g = e.factor;
                if r > 0.0 && g != f && graph.factor(g).arity() >= 2 {
                    let current = self.queue.priority(g.0).unwrap_or(0.0);
                    if current != f64::INFINITY {
                        self.queue.set(g.0, current + r);
                    }
                    self.work += 1;
                }
                if let Some(t) = &mut self.touched {
                    for &k in graph.factor(g).neighbors() {
                        if !t.flag[k.0] {
                            t.flag[k.0] = true;
                            t.list.push(k);
                        }
                    }
                }
            }
        }
    }

    /// Exact prospective residual of `f`: recompute without committing.
    pub fn prospective_residual(&mut self, state: &SparseState<'_>, f: FactorId) -> f64 {
        let graph = state.graph();
        let arity = graph.factor(f).arity();
        compute_into(state, f, &mut self.ws);
        let offset = graph.edge_offset(f);
        (0..arity)
            .map(|slot| residual(state.factor_to_var(offset + slot), &self.ws.out[slot]))
            .fold(0.0, f64::max)
    }

    /// Residual-scheduled message passing until the queue maximum drops to
    /// `epsilon` or `max_updates` factor updates have been spent.
    pub fn converge(
        &mut self,
        state: &mut SparseState<'_>,
        epsilon: f64,
        max_updates: Option<u64>,
    ) -> ConvergenceReport {
        let mut updates = 0;
        while let Some(f) = self.select(epsilon) {
            if max_updates.is_some_and(|m| updates >= m) {
                break;
            }
            self.update_factor(state, f);
            updates += 1;
        }
        let max_residual = self.max_priority();
        ConvergenceReport {
            updates,
            max_residual,
            certified: max_residual <= epsilon,
        }
    }
}

/// Run residual BP on `state` with `propagator`'s queue until the certified
/// residual bound reaches `epsilon` or the update budget is spent.
pub fn converge_using_bp(
    state: &mut SparseState<'_>,
    propagator: &mut Propagator,
    epsilon: f64,
    work_budget: Option<u64>,
) -> ConvergenceReport {
    propagator.converge(state, epsilon, work_budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_grid, FactorGraph};

    fn ln(x: f64) -> f64 {
        log(x)
    }

    fn probs(m: &[f64]) -> Vec<f64> {
        m.iter().map(|&x| exp(x)).collect()
    }

    #[test]
    fn residual_examples() {
        let a = [ln(0.5), ln(0.5)];
        assert_eq!(residual(&a, &a), 0.0);
        let scaled = [ln(0.5) + 3.0, ln(0.5) + 3.0];
        assert!(residual(&a, &scaled).abs() < 1e-15);
        let b = [ln(0.8), ln(0.2)];
        assert!((residual(&a, &b) - ln(4.0)).abs() < 1e-15);
        assert!((residual(&b, &a) - ln(4.0)).abs() < 1e-15);
        assert_eq!(residual(&a, &[0.0]), f64::INFINITY);
    }

    #[test]
    fn pairwise_message_example() {
        let g = FactorGraph::new(vec![2, 2], vec![(vec![0, 1], vec![ln(3.0), 0.0, 0.0, 0.0])]).unwrap();
        let s = SparseState::full(&g);
        let m = compute_factor_messages(&s, FactorId(0));
        let p = probs(&m[0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn flat_potentials_give_uniform_messages() {
        let g = FactorGraph::new(vec![3, 4, 2], vec![(vec![0, 1, 2], vec![0.0; 24])]).unwrap();
        let s = SparseState::full(&g);
        let m = compute_factor_messages(&s, FactorId(0));
        for (slot, size) in [3usize, 4, 2].iter().enumerate() {
            for p in probs(&m[slot]) {
                assert!((p - 1.0 / *size as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn observed_neighbor_slices_the_table() {
        let table: Vec<f64> = (0..9).map(|k| 0.3 * k as f64).collect();
        let g = FactorGraph::new(vec![3, 3], vec![(vec![0, 1], table.clone())]).unwrap();
        let s = SparseState::with_domains(&g, vec![vec![0], vec![0, 1, 2]]).unwrap();
        let m = compute_factor_messages(&s, FactorId(0));
        let mut expect = table[0..3].to_vec();
        normalize_log(&mut expect);
        for (a, b) in m[1].iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn underflowing_tables_fall_back_to_log_space() {
        let g = FactorGraph::new(vec![2, 2], vec![(vec![0, 1], vec![0.0, -900.0, -2000.0, -2000.5])]).unwrap();
        let s = SparseState::full(&g);
        let m = compute_factor_messages(&s, FactorId(0));
        assert!(m.iter().flatten().all(|x| x.is_finite()));
        assert!((m[1][0] - m[1][1] - 900.0).abs() < 1e-6);
        assert!((m[0][1] - m[0][0] - (-2000.0 + ln(1.0 + exp(-0.5)))).abs() < 1e-6);
    }

    #[test]
    fn singleton_state_is_already_converged() {
        let g = generate_grid(3, 3, 4, 1.0, 2).unwrap();
        let mut s = SparseState::new(&g, &[0; 9]).unwrap();
        let mut p = Propagator::new(&g, InitialPriority::Settled);
        let report = converge_using_bp(&mut s, &mut p, 1e-6, None);
        assert_eq!(report.updates, 0);
        assert!(report.certified);
        assert_eq!(consistency_violation(&s), 0.0);
        assert!((0..g.num_factors()).all(|f| p.prospective_residual(&s, FactorId(f)) == 0.0));
    }

    #[test]
    fn bound_dominates_exact_residual() {
        let g = generate_grid(3, 3, 4, 1.0, 11).unwrap();
        let mut s = SparseState::full(&g);
        let mut p = Propagator::new(&g, InitialPriority::Stale);
        for step in 0..200 {
            let f = p.queue().peek().unwrap().0;
            p.update_factor(&mut s, FactorId(f));
            if step > 30 {
                for fi in 0..g.num_factors() {
                    let bound = p.queue().priority(fi).unwrap();
                    let exact = p.prospective_residual(&s, FactorId(fi));
                    assert!(exact <= bound + 1e-12, "factor {fi}: {exact} > {bound}");
                }
            }
        }
    }

    #[test]
    fn consistency_drops_as_grid_converges() {
        let g = generate_grid(3, 3, 3, 1.0, 4).unwrap();
        let mut s = SparseState::full(&g);
        let mut p = Propagator::new(&g, InitialPriority::Stale);
        p.converge(&mut s, 0.0, Some(5));
        let early = consistency_violation(&s);
        assert!(early > 0.0);
        let report = p.converge(&mut s, 1e-10, Some(100_000));
        assert!(report.certified);
        let late = consistency_violation(&s);
        assert!(late < early && late < 1e-9, "{early} -> {late}");
        assert!(s.max_normalization_error() < 1e-12);
    }

    #[test]
    fn damping_still_converges() {
        let g = generate_grid(3, 3, 3, 1.0, 4).unwrap();
        let mut plain = SparseState::full(&g);
        Propagator::new(&g, InitialPriority::Stale).converge(&mut plain, 1e-12, None);
        let mut damped = SparseState::full(&g);
        let report = Propagator::new(&g, InitialPriority::Stale)
            .with_damping(0.5)
            .converge(&mut damped, 1e-12, None);
        assert!(report.certified);
        for i in 0..9 {
            let (a, b) = (plain.var_belief(VariableId(i)), damped.var_belief(VariableId(i)));
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
        }
    }
}
