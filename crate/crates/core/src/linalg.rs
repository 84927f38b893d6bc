//! Small dense helpers on column lists.

use nalgebra::{DMatrix, DVector};

pub const RANK_FLOOR: f64 = 1e-12;

/// `n × k` matrix whose columns are `cols`.
pub fn from_columns(n: usize, cols: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Singular values in decreasing order.
pub fn singular_values(n: usize, cols: &[Vec<f64>]) -> Vec<f64> {
    if cols.is_empty() || n == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = from_columns(n, cols).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Count of singular values above `rel · σ_max` (and above a tiny absolute floor).
pub fn rank_of(sv: &[f64], rel: f64) -> usize {
    let top = sv.first().copied().unwrap_or(0.0);
    let cut = (rel * top).max(RANK_FLOOR);
    sv.iter().filter(|s| **s > cut).count()
}

/// Distance from `v` to the span of `cols`, with numerically dependent
/// directions (relative to `rel`) dropped.
pub fn span_residual(v: &[f64], cols: &[Vec<f64>], rel: f64) -> f64 {
    let n = v.len();
    let vv = DVector::from_column_slice(v);
    if cols.is_empty() {
        return vv.norm();
    }
    let a = from_columns(n, cols);
    let svd = a.svd(true, false);
    let u = svd.u.expect("left vectors requested");
    let top = svd.singular_values.max();
    let cut = (rel * top).max(RANK_FLOOR);
    let mut proj = DVector::zeros(n);
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > cut {
            let uk = u.column(k);
            proj += uk * uk.dot(&vv);
        }
    }
    (vv - proj).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_and_rank() {
        let cols = vec![vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]];
        assert!(span_residual(&[3.0, -2.0, 0.0], &cols, 1e-9) < 1e-14);
        assert!((span_residual(&[0.0, 0.0, 2.0], &cols, 1e-9) - 2.0).abs() < 1e-14);
        assert_eq!(rank_of(&singular_values(3, &cols), 1e-9), 2);
        assert_eq!(rank_of(&singular_values(2, &[vec![0.0, 0.0]]), 1e-9), 0);
        assert_eq!(span_residual(&[0.0, 1.0], &[vec![0.0, 0.0]], 1e-9), 1.0);
    }
}
