//! Ground truth: brute-force enumeration and converged dense residual BP.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};
use thiserror::Error;

use crate::engine::{run_dense_with, Budget, EngineConfig, Method, WorkClock};
use crate::model::FactorGraph;

/// Default cap on the number of joint states enumerated.
pub const DEFAULT_STATE_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("joint state space has {states} states, above the cap of {cap}")]
    StateSpaceTooLarge { states: u128, cap: u64 },
    #[error("reference BP did not converge: max residual {max_residual} after {updates} updates")]
    NotConverged { max_residual: f64, updates: u64 },
}

/// Exact log-partition function and marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub log_z: f64,
    pub var_marginals: Vec<Vec<f64>>,
    /// Dense factor marginals, row-major in scope order.
    pub factor_marginals: Vec<Vec<f64>>,
}

fn log_score(graph: &FactorGraph, assignment: &[usize], scratch: &mut Vec<usize>) -> f64 {
    graph
        .factors()
        .iter()
        .map(|f| {
            scratch.clear();
            scratch.extend(f.neighbors().iter().map(|v| assignment[v.0]));
            f.log_potentials()[f.table_index(scratch)]
        })
        .sum()
}

fn advance(assignment: &mut [usize], sizes: &[usize]) -> bool {
    for k in (0..assignment.len()).rev() {
        assignment[k] += 1;
        if assignment[k] < sizes[k] {
            return true;
        }
        assignment[k] = 0;
    }
    false
}

/// Enumerate every joint assignment (with the default state cap).
pub fn exact_marginals(graph: &FactorGraph) -> Result<ExactResult, OracleError> {
    exact_marginals_capped(graph, DEFAULT_STATE_CAP)
}

/// Enumerate every joint assignment, refusing if there are more than `cap`.
pub fn exact_marginals_capped(graph: &FactorGraph, cap: u64) -> Result<ExactResult, OracleError> {
    let sizes = graph.domain_sizes();
    let states = sizes.iter().fold(1u128, |acc, &d| acc.saturating_mul(d as u128));
    if states > cap as u128 {
        return Err(OracleError::StateSpaceTooLarge { states, cap });
    }
    let n = sizes.len();
    let mut assignment = vec![0usize; n];
    let mut scratch = Vec::new();

    let mut max = f64::NEG_INFINITY;
    loop {
        max = max.max(log_score(graph, &assignment, &mut scratch));
        if !advance(&mut assignment, sizes) {
            break;
        }
    }

    let mut z = 0.0;
    let mut var_marginals: Vec<Vec<f64>> = sizes.iter().map(|&d| vec![0.0; d]).collect();
    let mut factor_marginals: Vec<Vec<f64>> =
        graph.factors().iter().map(|f| vec![0.0; f.log_potentials().len()]).collect();
    assignment.iter_mut().for_each(|x| *x = 0);
    loop {
        let w = exp(log_score(graph, &assignment, &mut scratch) - max);
        z += w;
        for (i, &v) in assignment.iter().enumerate() {
            var_marginals[i][v] += w;
        }
        for (f, m) in graph.factors().iter().zip(factor_marginals.iter_mut()) {
            scratch.clear();
            scratch.extend(f.neighbors().iter().map(|v| assignment[v.0]));
            m[f.table_index(&scratch)] += w;
        }
        if !advance(&mut assignment, sizes) {
            break;
        }
    }
    for m in var_marginals.iter_mut().chain(factor_marginals.iter_mut()) {
        m.iter_mut().for_each(|x| *x /= z);
    }
    Ok(ExactResult {
        log_z: max + log(z),
        var_marginals,
        factor_marginals,
    })
}

/// Default reference tolerance.
pub const REFERENCE_EPSILON: f64 = 1e-10;

/// Marginals of dense residual BP converged to `epsilon`, within
/// `max_updates` factor updates. Non-convergence is an error.
pub fn reference_marginals(
    graph: &FactorGraph,
    epsilon: f64,
    max_updates: u64,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let config = EngineConfig {
        method: Method::DenseResidual,
        epsilon,
        budget: Budget {
            max_ms: None,
            max_updates: Some(max_updates),
        },
        ..EngineConfig::default()
    };
    let outcome = run_dense_with(graph, &config, &WorkClock::default(), &mut |_| crate::engine::Flow::Continue);
    let last = outcome.final_snapshot;
    if !last.consistent {
        return Err(OracleError::NotConverged {
            max_residual: last.queue_max,
            updates: last.factor_updates,
        });
    }
    Ok(last.var_marginals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(x: f64) -> f64 {
        log(x)
    }

    #[test]
    fn single_variable() {
        let g = FactorGraph::new(vec![2], vec![(vec![0], vec![0.0, ln(3.0)])]).unwrap();
        let r = exact_marginals(&g).unwrap();
        assert!((r.log_z - ln(4.0)).abs() < 1e-15);
        assert!((r.var_marginals[0][0] - 0.25).abs() < 1e-15);
        assert!((r.var_marginals[0][1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn pairwise_enumeration() {
        let g = FactorGraph::new(vec![2, 2], vec![(vec![0, 1], vec![ln(3.0), 0.0, 0.0, 0.0])]).unwrap();
        let r = exact_marginals(&g).unwrap();
        let joint = &r.factor_marginals[0];
        for (a, b) in joint.iter().zip([0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((r.var_marginals[0][0] - 4.0 / 6.0).abs() < 1e-15);
        assert!((r.var_marginals[0][1] - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn cap_is_enforced() {
        let g = crate::model::generate_grid(3, 3, 10, 1.0, 0).unwrap();
        assert!(matches!(
            exact_marginals_capped(&g, 1000),
            Err(OracleError::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn strong_coupling_reference_failure_is_reported() {
        let g = crate::model::generate_grid(3, 3, 2, 1.0, 0).unwrap();
        assert!(matches!(
            reference_marginals(&g, 1e-10, 3),
            Err(OracleError::NotConverged { .. })
        ));
    }
}
