//! Independent oracles and model generators shared by the integration tests.
#![allow(dead_code)]

use abp_core::model::Edge;
use abp_core::{FactorGraph, FactorId, SparseState, VariableId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_table(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Random tree: unary factors everywhere, each variable after the first
/// attached to a uniformly chosen earlier one.
pub fn random_tree(seed: u64, max_vars: usize, max_domain: usize) -> FactorGraph {
    let mut r = rng(seed);
    let n = r.random_range(1..=max_vars);
    let sizes: Vec<usize> = (0..n).map(|_| r.random_range(1..=max_domain)).collect();
    let mut factors = Vec::new();
    for (i, &d) in sizes.iter().enumerate() {
        factors.push((vec![i], normal_table(&mut r, d, 1.0)));
    }
    for i in 1..n {
        let p = r.random_range(0..i);
        let scope = if r.random_bool(0.5) { vec![p, i] } else { vec![i, p] };
        let len = sizes[scope[0]] * sizes[scope[1]];
        factors.push((scope, normal_table(&mut r, len, 1.0)));
    }
    FactorGraph::new(sizes, factors).unwrap()
}

/// Random loopy graph with factors of arity up to `max_arity`.
pub fn random_graph(seed: u64, n: usize, max_domain: usize, num_factors: usize, max_arity: usize) -> FactorGraph {
    let mut r = rng(seed);
    let sizes: Vec<usize> = (0..n).map(|_| r.random_range(1..=max_domain)).collect();
    let mut factors = Vec::new();
    for (i, &d) in sizes.iter().enumerate() {
        factors.push((vec![i], normal_table(&mut r, d, 1.0)));
    }
    for _ in 0..num_factors {
        let arity = r.random_range(1..=max_arity.min(n));
        let mut scope: Vec<usize> = Vec::new();
        while scope.len() < arity {
            let v = r.random_range(0..n);
            if !scope.contains(&v) {
                scope.push(v);
            }
        }
        let len = scope.iter().map(|&v| sizes[v]).product();
        factors.push((scope, normal_table(&mut r, len, 1.0)));
    }
    FactorGraph::new(sizes, factors).unwrap()
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn brute_logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + compensated_sum(xs.iter().map(|&x| (x - m).exp())).ln()
}

/// All joint assignments of `sizes`, last coordinate fastest.
pub fn assignments(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &d in sizes {
        out = out
            .into_iter()
            .flat_map(|a| {
                (0..d).map(move |v| {
                    let mut b = a.clone();
                    b.push(v);
                    b
                })
            })
            .collect();
    }
    out
}

/// Probability-space enumeration: `(Z, marginals)` with compensated sums.
pub fn enumerate_probabilities(graph: &FactorGraph) -> (f64, Vec<Vec<f64>>) {
    let all = assignments(graph.domain_sizes());
    let weight = |a: &Vec<usize>| -> f64 {
        graph
            .factors()
            .iter()
            .map(|f| {
                let local: Vec<usize> = f.neighbors().iter().map(|v| a[v.0]).collect();
                f.log_potentials()[f.table_index(&local)].exp()
            })
            .product()
    };
    let weights: Vec<f64> = all.iter().map(weight).collect();
    let z = compensated_sum(weights.iter().copied());
    let marginals = graph
        .domain_sizes()
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            (0..d)
                .map(|v| {
                    compensated_sum(all.iter().zip(&weights).filter(|(a, _)| a[i] == v).map(|(_, &w)| w)) / z
                })
                .collect()
        })
        .collect();
    (z, marginals)
}

/// Textbook sum-product over every joint assignment of the full domains,
/// skipping values outside `S`. Returns normalized probabilities in the
/// local order of each neighbor's sparse domain.
pub fn textbook_messages(state: &SparseState<'_>, f: FactorId) -> Vec<Vec<f64>> {
    let graph = state.graph();
    let factor = graph.factor(f);
    let nbrs = factor.neighbors();
    let offset = graph.edge_offset(f);
    let incoming: Vec<Vec<f64>> = nbrs
        .iter()
        .enumerate()
        .map(|(slot, &v)| {
            let edge = Edge { factor: f, slot, id: offset + slot };
            state.var_to_factor(v, edge).iter().map(|x| x.exp()).collect()
        })
        .collect();
    let sizes: Vec<usize> = nbrs.iter().map(|&v| graph.domain_size(v)).collect();
    let mut out: Vec<Vec<f64>> = nbrs.iter().map(|&v| vec![0.0; state.domain(v).len()]).collect();
    for a in assignments(&sizes) {
        let locals: Option<Vec<usize>> = nbrs
            .iter()
            .zip(&a)
            .map(|(&v, &x)| state.domain(v).local_index(x))
            .collect();
        let Some(locals) = locals else { continue };
        let w = factor.log_potentials()[factor.table_index(&a)].exp();
        for i in 0..nbrs.len() {
            let prod: f64 = (0..nbrs.len()).filter(|&j| j != i).map(|j| incoming[j][locals[j]]).product();
            out[i][locals[i]] += w * prod;
        }
    }
    for m in &mut out {
        let z: f64 = m.iter().sum();
        m.iter_mut().for_each(|x| *x /= z);
    }
    out
}

pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn var(i: usize) -> VariableId {
    VariableId(i)
}
