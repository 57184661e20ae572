use std::collections::BTreeSet;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{CorrelationKind, SlotIndexing};

const CLAMP: f64 = 0.99;

/// Working correlation in effect at the end of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingCorrelation {
    pub kind: CorrelationKind,
    pub indexing: SlotIndexing,
    /// Common within-cluster correlation (exchangeable only).
    pub alpha: Option<f64>,
    /// Position-indexed matrix (unstructured only), row-major.
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Position pairs seen in fewer than two clusters; their entry is 0.
    pub flagged_pairs: Vec<(usize, usize)>,
    /// Off-diagonals were shrunk to restore positive definiteness.
    pub shrunk: bool,
}

impl WorkingCorrelation {
    pub fn independence(indexing: SlotIndexing) -> Self {
        WorkingCorrelation {
            kind: CorrelationKind::Independence,
            indexing,
            alpha: None,
            matrix: None,
            flagged_pairs: Vec::new(),
            shrunk: false,
        }
    }

    /// Correlation among rows at `positions` of one block.
    pub(crate) fn block(&self, positions: &[usize]) -> DMatrix<f64> {
        let n = positions.len();
        match (&self.kind, self.alpha, &self.matrix) {
            (CorrelationKind::Exchangeable, Some(a), _) => DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { a }),
            (CorrelationKind::Unstructured, _, Some(m)) => DMatrix::from_fn(n, n, |i, j| m[positions[i]][positions[j]]),
            _ => DMatrix::identity(n, n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnstructuredEstimate {
    pub matrix: DMatrix<f64>,
    pub flagged_pairs: Vec<(usize, usize)>,
    /// Number of distinct clusters supporting each pair.
    pub support: DMatrix<usize>,
}

/// Pairwise moment estimate of an unstructured correlation from Pearson
/// residuals: `sum r_j r_k / sqrt(sum r_j^2 * sum r_k^2)` over blocks where
/// both positions are observed, clamped to [-0.99, 0.99]. Pairs observed in
/// fewer than two distinct clusters are set to 0 and flagged.
pub fn estimate_unstructured_correlation(
    residuals: &[f64],
    blocks: &[Range<usize>],
    position: &[usize],
    block_cluster: &[usize],
    n_positions: usize,
) -> UnstructuredEstimate {
    let p = n_positions;
    let mut cross = DMatrix::<f64>::zeros(p, p);
    let mut sq_j = DMatrix::<f64>::zeros(p, p);
    let mut sq_k = DMatrix::<f64>::zeros(p, p);
    let mut clusters: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); p * p];
    for (b, range) in blocks.iter().enumerate() {
        for i in range.clone() {
            for k in range.clone() {
                if i == k {
                    continue;
                }
                let (a, c) = (position[i], position[k]);
                cross[(a, c)] += residuals[i] * residuals[k];
                sq_j[(a, c)] += residuals[i] * residuals[i];
                sq_k[(a, c)] += residuals[k] * residuals[k];
                clusters[a * p + c].insert(block_cluster[b]);
            }
        }
    }
    let mut matrix = DMatrix::<f64>::identity(p, p);
    let mut flagged_pairs = Vec::new();
    let support = DMatrix::from_fn(p, p, |a, c| clusters[a * p + c].len());
    for a in 0..p {
        for c in (a + 1)..p {
            let denom = (sq_j[(a, c)] * sq_k[(a, c)]).sqrt();
            let value = if support[(a, c)] < 2 || !(denom > 0.0) {
                flagged_pairs.push((a, c));
                0.0
            } else {
                (cross[(a, c)] / denom).clamp(-CLAMP, CLAMP)
            };
            matrix[(a, c)] = value;
            matrix[(c, a)] = value;
        }
    }
    UnstructuredEstimate { matrix, flagged_pairs, support }
}

/// Exchangeable moment estimate: mean within-block residual cross-product
/// divided by the mean squared residual, kept inside the range where every
/// block's matrix stays positive definite.
pub(crate) fn estimate_exchangeable(residuals: &[f64], blocks: &[Range<usize>]) -> f64 {
    let n = residuals.len() as f64;
    let phi = residuals.iter().map(|r| r * r).sum::<f64>() / n;
    let (mut cross, mut pairs) = (0.0, 0usize);
    let mut largest = 1;
    for range in blocks {
        largest = largest.max(range.len());
        let s: f64 = residuals[range.clone()].iter().sum();
        let ss: f64 = residuals[range.clone()].iter().map(|r| r * r).sum();
        cross += (s * s - ss) / 2.0;
        pairs += range.len() * (range.len() - 1) / 2;
    }
    if pairs == 0 || !(phi > 0.0) {
        return 0.0;
    }
    let lower = if largest > 1 { (-1.0 / (largest as f64 - 1.0) + 1e-6).max(-CLAMP) } else { -CLAMP };
    (cross / pairs as f64 / phi).clamp(lower, CLAMP)
}

/// Shrinks off-diagonals until the matrix admits a Cholesky factor.
pub(crate) fn make_positive_definite(m: &mut DMatrix<f64>) -> bool {
    let mut shrunk = false;
    for _ in 0..200 {
        if m.clone().cholesky().is_some() {
            return shrunk;
        }
        shrunk = true;
        let n = m.nrows();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m[(i, j)] *= 0.95;
                }
            }
        }
    }
    m.fill_with_identity();
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_residuals_clamp() {
        // 3 clusters, positions 0 and 1, identical residuals
        let r = [0.5, 0.5, -1.0, -1.0, 2.0, 2.0];
        let blocks = [0..2, 2..4, 4..6];
        let pos = [0, 1, 0, 1, 0, 1];
        let est = estimate_unstructured_correlation(&r, &blocks, &pos, &[0, 1, 2], 2);
        assert_eq!(est.matrix[(0, 1)], 0.99);
        assert!(est.flagged_pairs.is_empty());
    }

    #[test]
    fn single_cluster_pair_is_flagged() {
        let r = [0.5, 0.7, -1.0, 2.0];
        let blocks = [0..2, 2..3, 3..4];
        let pos = [0, 1, 0, 1];
        let est = estimate_unstructured_correlation(&r, &blocks, &pos, &[0, 1, 2], 2);
        assert_eq!(est.matrix[(0, 1)], 0.0);
        assert_eq!(est.flagged_pairs, vec![(0, 1)]);
    }

    #[test]
    fn exchangeable_bounds() {
        let r = [1.0, -1.0, 1.0, -1.0];
        let a = estimate_exchangeable(&r, &[0..2, 2..4]);
        assert!((-0.99..-0.9).contains(&a));
    }

    #[test]
    fn pd_repair() {
        let mut m = DMatrix::from_row_slice(3, 3, &[1.0, 0.99, -0.99, 0.99, 1.0, 0.99, -0.99, 0.99, 1.0]);
        assert!(make_positive_definite(&mut m));
        assert!(m.clone().cholesky().is_some());
    }
}
