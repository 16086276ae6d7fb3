//! Factor-graph data model.
//!
//! Potentials are kept in log space. Tables are flattened row-major in the
//! declared neighbor order (the last neighbor varies fastest), which is the
//! convention of UAI model files.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Dense index of a variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VariableId(pub usize);

/// Dense index of a factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FactorId(pub usize);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("variable {0} has an empty domain")]
    EmptyDomain(usize),
    #[error("factor {0} has no neighbors")]
    EmptyScope(usize),
    #[error("factor {factor} references unknown variable {variable}")]
    UnknownVariable { factor: usize, variable: usize },
    #[error("factor {factor} lists variable {variable} twice")]
    DuplicateNeighbor { factor: usize, variable: usize },
    #[error("factor {factor} table has {found} entries, expected {expected}")]
    TableLength {
        factor: usize,
        expected: usize,
        found: usize,
    },
    #[error("factor {factor} entry {index} is not finite")]
    NonFinitePotential { factor: usize, index: usize },
    #[error("variable {0} is not attached to any factor")]
    IsolatedVariable(usize),
    #[error("variable {variable} is not a neighbor of factor {factor}")]
    NotANeighbor { factor: usize, variable: usize },
    #[error("value {value} is outside the domain of variable {variable} (size {size})")]
    ValueOutOfRange {
        variable: usize,
        value: usize,
        size: usize,
    },
    #[error("invalid grid parameters: {0}")]
    InvalidGrid(&'static str),
}

/// One factor: an ordered scope and a log-potential table over it.
#[derive(Debug, Clone)]
pub struct Factor {
    neighbors: Vec<VariableId>,
    log_potentials: Vec<f64>,
    strides: Vec<usize>,
    /// `exp(phi - max phi)`, every entry in `(0, 1]`.
    weights: Vec<f64>,
    max_log_potential: f64,
}

impl Factor {
    pub fn neighbors(&self) -> &[VariableId] {
        &self.neighbors
    }

    pub fn arity(&self) -> usize {
        self.neighbors.len()
    }

    pub fn log_potentials(&self) -> &[f64] {
        &self.log_potentials
    }

    /// Row-major stride of each neighbor slot.
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Shifted linear potentials `exp(phi - max phi)`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn max_log_potential(&self) -> f64 {
        self.max_log_potential
    }

    /// Position of `var` in the scope.
    pub fn slot_of(&self, var: VariableId) -> Option<usize> {
        self.neighbors.iter().position(|&v| v == var)
    }

    pub fn table_index(&self, assignment: &[usize]) -> usize {
        assignment
            .iter()
            .zip(&self.strides)
            .map(|(v, s)| v * s)
            .sum()
    }
}

/// An edge of the bipartite graph seen from a variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub factor: FactorId,
    /// Position of the variable in the factor's scope.
    pub slot: usize,
    /// Global edge index, `edge_offset(factor) + slot`.
    pub id: usize,
}

/// Immutable bipartite factor graph.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    domain_sizes: Vec<usize>,
    factors: Vec<Factor>,
    var_to_factors: Vec<Vec<FactorId>>,
    var_edges: Vec<Vec<Edge>>,
    edge_offsets: Vec<usize>,
    num_edges: usize,
}

impl FactorGraph {
    /// Build a graph from variable cardinalities and `(scope, log_table)` pairs.
    pub fn new(
        domain_sizes: Vec<usize>,
        factors: Vec<(Vec<usize>, Vec<f64>)>,
    ) -> Result<Self, ModelError> {
        if let Some(i) = domain_sizes.iter().position(|&d| d == 0) {
            return Err(ModelError::EmptyDomain(i));
        }
        let n = domain_sizes.len();
        let mut built = Vec::with_capacity(factors.len());
        for (fi, (scope, table)) in factors.into_iter().enumerate() {
            if scope.is_empty() {
                return Err(ModelError::EmptyScope(fi));
            }
            for (k, &v) in scope.iter().enumerate() {
                if v >= n {
                    return Err(ModelError::UnknownVariable {
                        factor: fi,
                        variable: v,
                    });
                }
                if scope[..k].contains(&v) {
                    return Err(ModelError::DuplicateNeighbor {
                        factor: fi,
                        variable: v,
                    });
                }
            }
            let mut strides = vec![0; scope.len()];
            let mut acc = 1usize;
            for k in (0..scope.len()).rev() {
                strides[k] = acc;
                acc *= domain_sizes[scope[k]];
            }
            if table.len() != acc {
                return Err(ModelError::TableLength {
                    factor: fi,
                    expected: acc,
                    found: table.len(),
                });
            }
            if let Some(index) = table.iter().position(|x| !x.is_finite()) {
                return Err(ModelError::NonFinitePotential { factor: fi, index });
            }
            let max = table.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights = table.iter().map(|&x| exp(x - max)).collect();
            built.push(Factor {
                neighbors: scope.into_iter().map(VariableId).collect(),
                log_potentials: table,
                strides,
                weights,
                max_log_potential: max,
            });
        }

        let mut var_to_factors = vec![Vec::new(); n];
        let mut var_edges = vec![Vec::new(); n];
        let mut edge_offsets = Vec::with_capacity(built.len());
        let mut num_edges = 0;
        for (fi, f) in built.iter().enumerate() {
            edge_offsets.push(num_edges);
            for (slot, &v) in f.neighbors.iter().enumerate() {
                var_to_factors[v.0].push(FactorId(fi));
                var_edges[v.0].push(Edge {
                    factor: FactorId(fi),
                    slot,
                    id: num_edges + slot,
                });
            }
            num_edges += f.arity();
        }
        if let Some(i) = var_to_factors.iter().position(Vec::is_empty) {
            return Err(ModelError::IsolatedVariable(i));
        }
        Ok(Self {
            domain_sizes,
            factors: built,
            var_to_factors,
            var_edges,
            edge_offsets,
            num_edges,
        })
    }

    pub fn num_variables(&self) -> usize {
        self.domain_sizes.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn domain_size(&self, var: VariableId) -> usize {
        self.domain_sizes[var.0]
    }

    pub fn domain_sizes(&self) -> &[usize] {
        &self.domain_sizes
    }

    /// Sum of all full domain sizes.
    pub fn total_domain_size(&self) -> usize {
        self.domain_sizes.iter().sum()
    }

    pub fn factor(&self, f: FactorId) -> &Factor {
        &self.factors[f.0]
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factors_of(&self, var: VariableId) -> &[FactorId] {
        &self.var_to_factors[var.0]
    }

    pub fn edges_of(&self, var: VariableId) -> &[Edge] {
        &self.var_edges[var.0]
    }

    pub fn degree(&self, var: VariableId) -> usize {
        self.var_to_factors[var.0].len()
    }

    pub fn edge_offset(&self, f: FactorId) -> usize {
        self.edge_offsets[f.0]
    }

    /// `log sum exp phi_f(v_f)` over all joint assignments of `f` with
    /// `pin_var` fixed to `pin_value`.
    pub fn factor_row_logsumexp(
        &self,
        f: FactorId,
        pin_var: VariableId,
        pin_value: usize,
    ) -> Result<f64, ModelError> {
        let factor = &self.factors[f.0];
        let slot = factor.slot_of(pin_var).ok_or(ModelError::NotANeighbor {
            factor: f.0,
            variable: pin_var.0,
        })?;
        let size = self.domain_sizes[pin_var.0];
        if pin_value >= size {
            return Err(ModelError::ValueOutOfRange {
                variable: pin_var.0,
                value: pin_value,
                size,
            });
        }
        let stride = factor.strides[slot];
        let block = stride * size;
        let outer = factor.log_potentials.len() / block;
        let row = |hi: usize, lo: usize| factor.log_potentials[hi * block + pin_value * stride + lo];
        let mut max = f64::NEG_INFINITY;
        for hi in 0..outer {
            for lo in 0..stride {
                max = max.max(row(hi, lo));
            }
        }
        let mut sum = 0.0;
        for hi in 0..outer {
            for lo in 0..stride {
                sum += exp(row(hi, lo) - max);
            }
        }
        Ok(max + log(sum))
    }

    /// Row log-sum-exp for every value of the variable at `slot` of `f`.
    pub fn factor_row_logsumexps(&self, f: FactorId, slot: usize) -> Vec<f64> {
        let factor = &self.factors[f.0];
        let var = factor.neighbors[slot];
        let size = self.domain_sizes[var.0];
        let stride = factor.strides[slot];
        let mut sums = vec![0.0; size];
        // Shifting by the table max is enough: every row contains an entry
        // no smaller than its own max, and rows differ by at most the table
        // range, which is finite.
        for (idx, &w) in factor.weights.iter().enumerate() {
            sums[(idx / stride) % size] += w;
        }
        let mut out = Vec::with_capacity(size);
        for (value, s) in sums.into_iter().enumerate() {
            if s > 0.0 && s.is_finite() {
                out.push(factor.max_log_potential + log(s));
            } else {
                out.push(self.factor_row_logsumexp(f, var, value).unwrap_or(f64::NAN));
            }
        }
        out
    }
}

/// Row-major variable index of grid cell `(r, c)`.
pub fn grid_index(cols: usize, r: usize, c: usize) -> usize {
    r * cols + c
}

/// Synthetic grid MRF: one unary factor per cell followed by one pairwise
/// factor per horizontal and vertical adjacency.
///
/// Unary log-potentials are standard normal, pairwise ones normal with
/// standard deviation `coupling_scale`. The graph is a pure function of the
/// arguments (ChaCha8 stream seeded from `seed`).
pub fn generate_grid(
    rows: usize,
    cols: usize,
    domain_size: usize,
    coupling_scale: f64,
    seed: u64,
) -> Result<FactorGraph, ModelError> {
    if rows == 0 || cols == 0 {
        return Err(ModelError::InvalidGrid("rows and cols must be at least 1"));
    }
    if domain_size < 2 {
        return Err(ModelError::InvalidGrid("domain size must be at least 2"));
    }
    if !(coupling_scale > 0.0 && coupling_scale.is_finite()) {
        return Err(ModelError::InvalidGrid("coupling scale must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows * cols;
    let mut factors = Vec::new();
    for i in 0..n {
        let table: Vec<f64> = (0..domain_size)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        factors.push((vec![i], table));
    }
    let pair_len = domain_size * domain_size;
    for r in 0..rows {
        for c in 0..cols {
            let i = grid_index(cols, r, c);
            let mut neighbors = Vec::with_capacity(2);
            if c + 1 < cols {
                neighbors.push(grid_index(cols, r, c + 1));
            }
            if r + 1 < rows {
                neighbors.push(grid_index(cols, r + 1, c));
            }
            for j in neighbors {
                let table: Vec<f64> = (0..pair_len)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        coupling_scale * z
                    })
                    .collect();
                factors.push((vec![i, j], table));
            }
        }
    }
    FactorGraph::new(vec![domain_size; n], factors)
}
