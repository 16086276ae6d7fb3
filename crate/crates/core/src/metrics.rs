//! Error metrics between dense marginal sets.
//!
//! Both metrics average over variables; marginals must share the full-domain
//! shape.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("marginal sets differ in shape at variable {0}")]
    ShapeMismatch(usize),
    #[error("marginal sets have {0} and {1} variables")]
    VariableCount(usize, usize),
}

fn check(p: &[alloc::vec::Vec<f64>], q: &[alloc::vec::Vec<f64>]) -> Result<(), MetricError> {
    if p.len() != q.len() {
        return Err(MetricError::VariableCount(p.len(), q.len()));
    }
    match p.iter().zip(q).position(|(a, b)| a.len() != b.len()) {
        Some(i) => Err(MetricError::ShapeMismatch(i)),
        None => Ok(()),
    }
}

/// Mean over variables of `1/2 sum_v |p_i(v) - q_i(v)|`.
pub fn tv_distance(p: &[alloc::vec::Vec<f64>], q: &[alloc::vec::Vec<f64>]) -> Result<f64, MetricError> {
    check(p, q)?;
    if p.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .sum();
    Ok(total / p.len() as f64)
}

/// Mean over variables of `sum_v (p_i(v) - q_i(v))^2`.
pub fn l2_error(p: &[alloc::vec::Vec<f64>], q: &[alloc::vec::Vec<f64>]) -> Result<f64, MetricError> {
    check(p, q)?;
    if p.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum();
    Ok(total / p.len() as f64)
}

/// Largest absolute entry-wise difference.
pub fn linf_distance(p: &[alloc::vec::Vec<f64>], q: &[alloc::vec::Vec<f64>]) -> Result<f64, MetricError> {
    check(p, q)?;
    Ok(p.iter()
        .zip(q)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn examples() {
        let p = vec![vec![0.8, 0.2]];
        let q = vec![vec![0.5, 0.5]];
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(l2_error(&p, &p).unwrap(), 0.0);
        assert!((tv_distance(&p, &q).unwrap() - 0.3).abs() < 1e-15);
        assert!((l2_error(&p, &q).unwrap() - 0.18).abs() < 1e-15);
        assert_eq!(tv_distance(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]]).unwrap(), 1.0);
    }

    #[test]
    fn zeros_outside_support_count() {
        let sparse = vec![vec![1.0, 0.0, 0.0]];
        let reference = vec![vec![0.6, 0.3, 0.1]];
        assert!((l2_error(&sparse, &reference).unwrap() - (0.16 + 0.09 + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        assert_eq!(tv_distance(&[vec![1.0]], &[vec![0.5, 0.5]]), Err(MetricError::ShapeMismatch(0)));
        assert_eq!(l2_error(&[vec![1.0]], &[]), Err(MetricError::VariableCount(1, 0)));
    }
}
