//! Mutable inference state over partially instantiated domains.
//!
//! Each variable carries an ordered set `S_i` of instantiated values. Every
//! message table is indexed by *local* position in `S_i` (insertion order),
//! so growing a domain appends one entry to each table touching it. Values
//! outside `S_i` carry no stored mass at all.
//!
//! Factor-to-variable messages are stored as normalized log tables. The
//! variable side is kept as one cached per-variable sum of incoming logs;
//! a variable-to-factor message is that sum minus the reverse message.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};
use thiserror::Error;

use crate::logspace::{entropy, log_sum_exp, normalize_log, softmax};
use crate::model::{Edge, FactorGraph, FactorId, VariableId};

const NOT_INSTANTIATED: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("expected {expected} initial values, got {found}")]
    WrongLength { expected: usize, found: usize },
    #[error("value {value} is outside the domain of variable {variable} (size {size})")]
    OutOfRange {
        variable: usize,
        value: usize,
        size: usize,
    },
    #[error("variable {0} would have an empty instantiated domain")]
    EmptyDomain(usize),
    #[error("value {value} is already instantiated for variable {variable}")]
    AlreadyInstantiated { variable: usize, value: usize },
}

/// Instantiated values of one variable, in insertion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseDomain {
    values: Vec<usize>,
    position: Vec<u32>,
}

impl SparseDomain {
    fn new(full_size: usize) -> Self {
        Self {
            values: Vec::new(),
            position: vec![NOT_INSTANTIATED; full_size],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn full_size(&self) -> usize {
        self.position.len()
    }

    pub fn is_full(&self) -> bool {
        self.values.len() == self.position.len()
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn contains(&self, value: usize) -> bool {
        self.position.get(value).is_some_and(|&p| p != NOT_INSTANTIATED)
    }

    pub fn local_index(&self, value: usize) -> Option<usize> {
        match self.position.get(value) {
            Some(&p) if p != NOT_INSTANTIATED => Some(p as usize),
            _ => None,
        }
    }

    fn insert(&mut self, value: usize) -> usize {
        let at = self.values.len();
        self.values.push(value);
        self.position[value] = at as u32;
        at
    }
}

/// Visit every joint assignment of the sparse cross product `lists[0] x
/// lists[1] x ...` in row-major order of local indices. The callback gets
/// the local indices and the full-table index of the assignment.
pub(crate) fn for_each_assignment(
    lists: &[&[usize]],
    strides: &[usize],
    mut visit: impl FnMut(&[usize], usize),
) {
    if lists.iter().any(|l| l.is_empty()) {
        return;
    }
    let k = lists.len();
    let mut local = vec![0usize; k];
    let mut index: usize = lists.iter().zip(strides).map(|(l, s)| l[0] * s).sum();
    loop {
        visit(&local, index);
        let mut slot = k;
        loop {
            if slot == 0 {
                return;
            }
            slot -= 1;
            let list = lists[slot];
            index -= list[local[slot]] * strides[slot];
            local[slot] += 1;
            if local[slot] < list.len() {
                index += list[local[slot]] * strides[slot];
                break;
            }
            local[slot] = 0;
            index += list[0] * strides[slot];
        }
    }
}

#[derive(Debug, Clone)]
pub struct SparseState<'g> {
    graph: &'g FactorGraph,
    domains: Vec<SparseDomain>,
    /// Factor-to-variable log messages by global edge id.
    messages: Vec<Vec<f64>>,
    /// Per variable, sum over incident edges of the incoming log messages.
    incoming: Vec<Vec<f64>>,
}

impl<'g> SparseState<'g> {
    /// Singleton domains `S_i = {initial[i]}`.
    pub fn new(graph: &'g FactorGraph, initial: &[usize]) -> Result<Self, StateError> {
        if initial.len() != graph.num_variables() {
            return Err(StateError::WrongLength {
                expected: graph.num_variables(),
                found: initial.len(),
            });
        }
        Self::with_domains(graph, initial.iter().map(|&v| vec![v]).collect())
    }

    /// Every domain fully instantiated, messages uniform.
    pub fn full(graph: &'g FactorGraph) -> Self {
        let domains = graph.domain_sizes().iter().map(|&d| (0..d).collect()).collect();
        Self::with_domains(graph, domains).expect("full domains are valid")
    }

    /// Arbitrary initial domains, messages uniform over each.
    pub fn with_domains(graph: &'g FactorGraph, values: Vec<Vec<usize>>) -> Result<Self, StateError> {
        if values.len() != graph.num_variables() {
            return Err(StateError::WrongLength {
                expected: graph.num_variables(),
                found: values.len(),
            });
        }
        let mut domains = Vec::with_capacity(values.len());
        for (i, vals) in values.into_iter().enumerate() {
            let size = graph.domain_size(VariableId(i));
            if vals.is_empty() {
                return Err(StateError::EmptyDomain(i));
            }
            let mut d = SparseDomain::new(size);
            for v in vals {
                if v >= size {
                    return Err(StateError::OutOfRange {
                        variable: i,
                        value: v,
                        size,
                    });
                }
                if d.contains(v) {
                    return Err(StateError::AlreadyInstantiated { variable: i, value: v });
                }
                d.insert(v);
            }
            domains.push(d);
        }
        let mut messages = vec![Vec::new(); graph.num_edges()];
        let mut incoming = Vec::with_capacity(domains.len());
        for (i, d) in domains.iter().enumerate() {
            let uniform = -log(d.len() as f64);
            for e in graph.edges_of(VariableId(i)) {
                messages[e.id] = vec![uniform; d.len()];
            }
            incoming.push(vec![uniform * graph.degree(VariableId(i)) as f64; d.len()]);
        }
        Ok(Self {
            graph,
            domains,
            messages,
            incoming,
        })
    }

    pub fn graph(&self) -> &'g FactorGraph {
        self.graph
    }

    pub fn domain(&self, var: VariableId) -> &SparseDomain {
        &self.domains[var.0]
    }

    pub fn domains(&self) -> &[SparseDomain] {
        &self.domains
    }

    /// `sum_i |S_i|`.
    pub fn instantiated(&self) -> usize {
        self.domains.iter().map(SparseDomain::len).sum()
    }

    /// `sum_i |S_i| / sum_i |D_i|`.
    pub fn domain_fill(&self) -> f64 {
        self.instantiated() as f64 / self.graph.total_domain_size() as f64
    }

    pub fn is_fully_instantiated(&self) -> bool {
        self.domains.iter().all(SparseDomain::is_full)
    }

    /// Normalized log message `m_{f->i}` over local positions of `S_i`.
    pub fn factor_to_var(&self, edge_id: usize) -> &[f64] {
        &self.messages[edge_id]
    }

    /// Unnormalized log of `m_{i->f}`: incoming sum minus the reverse message.
    pub(crate) fn var_to_factor_unnormalized(&self, var: VariableId, edge_id: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.incoming[var.0]
                .iter()
                .zip(&self.messages[edge_id])
                .map(|(s, m)| s - m),
        );
    }

    /// Normalized log message `m_{i->f}`.
    pub fn var_to_factor(&self, var: VariableId, edge: Edge) -> Vec<f64> {
        let mut out = Vec::new();
        self.var_to_factor_unnormalized(var, edge.id, &mut out);
        normalize_log(&mut out);
        out
    }

    /// Belief over `S_i` in local order.
    pub fn var_belief(&self, var: VariableId) -> Vec<f64> {
        softmax(&self.incoming[var.0])
    }

    /// Belief over the full domain, exact zeros outside `S_i`.
    pub fn var_belief_dense(&self, var: VariableId) -> Vec<f64> {
        let d = &self.domains[var.0];
        let mut out = vec![0.0; d.full_size()];
        for (&p, &v) in self.var_belief(var).iter().zip(d.values()) {
            out[v] = p;
        }
        out
    }

    /// Log factor belief over the sparse cross product `S_f`, row-major in
    /// local indices.
    pub fn factor_log_belief(&self, f: FactorId) -> Vec<f64> {
        let factor = self.graph.factor(f);
        let offset = self.graph.edge_offset(f);
        let inbound: Vec<Vec<f64>> = factor
            .neighbors()
            .iter()
            .enumerate()
            .map(|(slot, &v)| {
                let mut m = Vec::new();
                self.var_to_factor_unnormalized(v, offset + slot, &mut m);
                normalize_log(&mut m);
                m
            })
            .collect();
        let lists: Vec<&[usize]> = factor
            .neighbors()
            .iter()
            .map(|&v| self.domains[v.0].values())
            .collect();
        let phi = factor.log_potentials();
        let mut out = Vec::new();
        for_each_assignment(&lists, factor.strides(), |local, idx| {
            let mut x = phi[idx];
            for (slot, &l) in local.iter().enumerate() {
                x += inbound[slot][l];
            }
            out.push(x);
        });
        normalize_log(&mut out);
        out
    }

    /// Factor belief over `S_f`.
    pub fn factor_belief(&self, f: FactorId) -> Vec<f64> {
        self.factor_log_belief(f).into_iter().map(exp).collect()
    }

    /// Bethe objective restricted to instantiated assignments:
    /// `sum_f E_{mu_f}[phi_f] + sum_f H(mu_f) - sum_i (d_i - 1) H(mu_i)`.
    pub fn bethe_objective(&self) -> f64 {
        let mut total = 0.0;
        for fi in 0..self.graph.num_factors() {
            let f = FactorId(fi);
            let factor = self.graph.factor(f);
            let logb = self.factor_log_belief(f);
            let lists: Vec<&[usize]> = factor
                .neighbors()
                .iter()
                .map(|&v| self.domains[v.0].values())
                .collect();
            let phi = factor.log_potentials();
            let mut k = 0;
            for_each_assignment(&lists, factor.strides(), |_, idx| {
                let lb = logb[k];
                let p = exp(lb);
                if p > 0.0 {
                    total += p * (phi[idx] - lb);
                }
                k += 1;
            });
        }
        for i in 0..self.graph.num_variables() {
            let v = VariableId(i);
            let d = self.graph.degree(v) as f64;
            total -= (d - 1.0) * entropy(&self.var_belief(v));
        }
        total
    }

    /// Replace the outgoing messages of `f` (one normalized log table per
    /// slot) and refresh the cached sums of its neighbors.
    pub(crate) fn commit_factor_messages(&mut self, f: FactorId, new: &[Vec<f64>]) {
        let factor = self.graph.factor(f);
        let offset = self.graph.edge_offset(f);
        for (slot, &v) in factor.neighbors().iter().enumerate() {
            let table = &mut self.messages[offset + slot];
            table.clear();
            table.extend_from_slice(&new[slot]);
            self.refresh_incoming(v);
        }
    }

    fn refresh_incoming(&mut self, var: VariableId) {
        let sum = &mut self.incoming[var.0];
        sum.iter_mut().for_each(|x| *x = 0.0);
        for e in self.graph.edges_of(var) {
            for (s, m) in sum.iter_mut().zip(&self.messages[e.id]) {
                *s += m;
            }
        }
    }

    /// Instantiate `value` for `var` and append an entry to every message
    /// touching `var`, at the uniform share `1/|S_i|` before renormalizing.
    /// The adjacent factors must be recomputed before the beliefs mean much.
    pub fn add_value(&mut self, var: VariableId, value: usize) -> Result<usize, StateError> {
        let d = &mut self.domains[var.0];
        if value >= d.full_size() {
            return Err(StateError::OutOfRange {
                variable: var.0,
                value,
                size: d.full_size(),
            });
        }
        if d.contains(value) {
            return Err(StateError::AlreadyInstantiated {
                variable: var.0,
                value,
            });
        }
        let local = d.insert(value);
        let share = -log(d.len() as f64);
        for e in self.graph.edges_of(var) {
            let table = &mut self.messages[e.id];
            table.push(share);
            normalize_log(table);
        }
        self.incoming[var.0].push(0.0);
        self.refresh_incoming(var);
        Ok(local)
    }

    /// Largest deviation of any stored message from normalization, in
    /// probability space.
    pub fn max_normalization_error(&self) -> f64 {
        self.messages
            .iter()
            .map(|m| (exp(log_sum_exp(m)) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}
