//! Log-domain numerics shared by the message kernels and the oracles.

use libm::{exp, log};

/// `log(sum(exp(xs)))`, max-shifted. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| exp(x - max)).sum();
    max + log(sum)
}

/// Shift `xs` so that `log_sum_exp(xs) == 0`. Returns the removed constant.
pub fn normalize_log(xs: &mut [f64]) -> f64 {
    let z = log_sum_exp(xs);
    for x in xs.iter_mut() {
        *x -= z;
    }
    z
}

/// Probabilities from log-weights, normalized to sum to one.
pub fn softmax(xs: &[f64]) -> alloc::vec::Vec<f64> {
    let z = log_sum_exp(xs);
    xs.iter().map(|&x| exp(x - z)).collect()
}

/// Shannon entropy in nats of a probability vector, with `0 log 0 = 0`.
pub fn entropy(ps: &[f64]) -> f64 {
    ps.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * log(p))
        .sum()
}
